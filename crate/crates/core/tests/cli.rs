//! The command line end to end on a small synthetic corpus.

use std::path::Path;

use llmrg::cli::run_with;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("llmrg").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn ok(args: &[&str]) -> String {
    let (code, out, err) = run(args);
    assert_eq!(code, 0, "{args:?} failed: {err}");
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    let text = r#"{
        "train": {"epochs": 2, "d_g": 8, "d_b": 8, "d_ff": 16, "buckets": 256, "batch_size": 8},
        "oracle": {"noise_rate": 0.2},
        "eval_seeds": [1, 2]
    }"#;
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let (code, out, err) = run(&[]);
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert!(err.contains("Usage"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["frobnicate"]).0, 1);
    assert_eq!(run(&["stats", "--dataset", "x", "--bogus"]).0, 1);
    assert_eq!(run(&["export-graph", "--graphs", "g", "--user", "u", "--format", "png"]).0, 1);
    assert_eq!(run(&["--tau", "500", "stats", "--dataset", "x"]).0, 1);
    assert_eq!(run(&["ingest", "--out", "x"]).0, 1);
}

#[test]
fn help_succeeds() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    for sub in ["ingest", "stats", "build-graphs", "train", "evaluate", "predict", "export-graph", "cache-stats"] {
        assert!(out.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let (code, _, err) = run(&["stats", "--dataset", p(&missing)]);
    assert_eq!(code, 2);
    assert!(err.contains("error"));
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = small_config(root);
    let data = root.join("data");
    let out = ok(&["--config", &cfg, "ingest", "--synthetic", "--users", "40", "--out", p(&data)]);
    assert!(out.contains("#Users") && out.contains("40"));
    assert!(data.join("dataset.json").is_file() && data.join("split.json").is_file());

    let stats = ok(&["stats", "--dataset", p(&data)]);
    assert_eq!(stats.lines().count(), 2);

    // Two builds with the same seed write identical graph files.
    let g1 = root.join("g1");
    let g2 = root.join("g2");
    ok(&["--config", &cfg, "--seed", "3", "build-graphs", "--dataset", p(&data), "--out", p(&g1)]);
    ok(&["--config", &cfg, "--seed", "3", "build-graphs", "--dataset", p(&data), "--out", p(&g2)]);
    let users1 = read_dir_sorted(&g1.join("users"));
    assert_eq!(users1.len(), 40);
    assert_eq!(users1, read_dir_sorted(&g2.join("users")));
    assert_eq!(std::fs::read(g1.join("split.json")).unwrap(), std::fs::read(g2.join("split.json")).unwrap());

    let model = root.join("model.ckpt");
    let out = ok(&["--config", &cfg, "train", "--graphs", p(&g1), "--out", p(&model)]);
    assert!(out.contains("final loss"));

    let user = users1[0].0.trim_end_matches(".json").to_string();
    let out = ok(&["predict", "--model", p(&model), "--user", &user, "--n", "5"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("1\t"));
    let (code, _, _) = run(&["predict", "--model", p(&model), "--user", "nobody"]);
    assert_eq!(code, 2);

    let table = ok(&["--config", &cfg, "evaluate", "--model", p(&model)]);
    assert!(table.contains("HR@10") && table.contains("full"));

    let reports = root.join("reports");
    let e1 = ok(&["--config", &cfg, "evaluate", "--graphs", p(&g1), "--variant", "full", "--variant", "base-only", "--out", p(&reports)]);
    let e2 = ok(&["--config", &cfg, "evaluate", "--graphs", p(&g1), "--variant", "full", "--variant", "base-only"]);
    assert_eq!(e1, e2);
    assert!(e1.contains("base_only"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(reports.join("full.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(std::fs::read_to_string(reports.join("base_only.csv")).unwrap().lines().count(), 3);

    let dot = ok(&["export-graph", "--graphs", p(&g1), "--user", &user, "--format", "dot"]);
    assert!(dot.starts_with("digraph"));
    let json_path = root.join("graph.json");
    ok(&["export-graph", "--graphs", p(&g1), "--user", &user, "--format", "json", "--out", p(&json_path)]);
    let pair: serde_json::Value = serde_json::from_slice(&std::fs::read(&json_path).unwrap()).unwrap();
    assert!(pair.get("reasoning").is_some() && pair.get("divergent").is_some());

    let csv = root.join("freq.csv");
    let out = ok(&["cache-stats", "--graphs", p(&g1), "--window", "50", "--csv", p(&csv)]);
    assert!(out.contains("window"));
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("step,access_frequency"));
}

#[test]
fn divergent_edges_are_styled_in_dot_output() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let graphs = root.join("g");
    ok(&["ingest", "--synthetic", "--users", "10", "--out", p(&data)]);
    ok(&["build-graphs", "--dataset", p(&data), "--out", p(&graphs)]);
    let any_dashed = read_dir_sorted(&graphs.join("users")).iter().any(|(name, _)| {
        let user = name.trim_end_matches(".json");
        ok(&["export-graph", "--graphs", p(&graphs), "--user", user]).contains("color=red, fontcolor=red, style=dashed")
    });
    assert!(any_dashed);
}
