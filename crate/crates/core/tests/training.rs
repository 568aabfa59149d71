//! Training loop, ablation reduction and prediction order.

mod common;

use llmrg::config::TrainConfig;
use llmrg::recommend::{train, Example, Model, ModelConfig, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::toy::{random_examples, toy_catalog};

fn config(variant: Variant) -> ModelConfig {
    ModelConfig {
        n_items: 20,
        d_g: 4,
        d_b: 6,
        d_ff: 8,
        steps: 2,
        l_tru: 6,
        buckets: 16,
        variant,
    }
}

fn examples(seed: u64, users: usize) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_examples(&mut rng, &toy_catalog(20), users, 6, 16)
}

fn train_config(lr: f64, epochs: usize, batch: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        epochs,
        batch_size: batch,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut model = Model::new(config(Variant::Full), 1, 0.1).unwrap();
    let before = model.clone();
    let report = train(&mut model, &examples(1, 8), &train_config(0.0, 1, 3)).unwrap();
    assert_eq!(report.steps, 3);
    assert_eq!(model, before);
}

#[test]
fn single_example_overfits() {
    let data = examples(2, 1);
    let mut model = Model::new(config(Variant::Full), 2, 0.1).unwrap();
    let start = model.loss(&data[0]);
    let report = train(&mut model, &data, &train_config(0.1, 200, 1)).unwrap();
    assert_eq!(report.steps, 200);
    let end = model.loss(&data[0]);
    assert!(end < 0.1, "loss went from {start} to {end}");
    assert!((report.loss_history.last().unwrap() - end).abs() < 0.05);
}

#[test]
fn same_seed_gives_identical_histories() {
    let data = examples(3, 10);
    let run = || {
        let mut model = Model::new(config(Variant::Full), 9, 0.1).unwrap();
        let report = train(&mut model, &data, &train_config(0.05, 4, 3)).unwrap();
        (report.loss_history, model)
    };
    let (h1, m1) = run();
    let (h2, m2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
    assert_eq!(h1.len(), 4);
}

#[test]
fn training_lowers_the_loss() {
    let data = examples(5, 10);
    let mut model = Model::new(config(Variant::Full), 5, 0.1).unwrap();
    let report = train(&mut model, &data, &train_config(0.1, 30, 5)).unwrap();
    assert!(report.loss_history.last().unwrap() < &report.loss_history[0]);
}

#[test]
fn graphless_full_model_reduces_to_base_only() {
    let mut data = examples(6, 6);
    let full = Model::new(config(Variant::Full), 6, 0.2).unwrap();
    let mut base = full.clone();
    base.config.variant = Variant::BaseOnly;
    for ex in data.iter_mut() {
        ex.ori = None;
        ex.div = None;
    }
    for ex in &data {
        assert_eq!(full.scores(ex), base.scores(ex));
    }
}

#[test]
fn zeroed_graph_fusion_blocks_reduce_to_base_only() {
    let data = examples(7, 6);
    let mut full = Model::new(config(Variant::Full), 7, 0.2).unwrap();
    let d_g = full.config.d_g;
    full.params.fusion.rows_mut().into_iter().take(2 * d_g).for_each(|mut r| r.fill(0.0));
    let mut base = full.clone();
    base.config.variant = Variant::BaseOnly;
    for ex in &data {
        assert!(ex.ori.is_some());
        let (a, b) = (full.scores(ex), base.scores(ex));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

#[test]
fn scores_match_hand_multiplication_and_top_n_matches_sort() {
    let data = examples(8, 4);
    let mut model = Model::new(config(Variant::Full), 8, 0.3).unwrap();
    // Two identical item rows force a score tie.
    let row = model.params.item.row(3).to_owned();
    model.params.item.row_mut(11).assign(&row);
    for ex in &data {
        let emb = model.embeddings(ex);
        let x: Vec<f64> = emb.e_ori.iter().chain(&emb.e_div).chain(&emb.e_base).copied().collect();
        let f = &model.params.fusion;
        let e_f: Vec<f64> = (0..f.ncols()).map(|k| (0..x.len()).map(|j| x[j] * f[[j, k]]).sum()).collect();
        let item = &model.params.item;
        let expected: Vec<f64> = (0..item.nrows()).map(|i| (0..e_f.len()).map(|k| item[[i, k]] * e_f[k]).sum()).collect();
        let scores = model.scores(ex);
        for (s, e) in scores.iter().zip(&expected) {
            assert!((s - e).abs() <= 1e-10 * e.abs().max(1.0));
        }
        assert_eq!(scores[3], scores[11]);

        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        for n in [1, 5, 20] {
            assert_eq!(model.predict_top_n(ex, n), order[..n].to_vec());
        }
        let pos3 = order.iter().position(|&i| i == 3).unwrap();
        assert_eq!(order[pos3 + 1], 11);
    }
}
