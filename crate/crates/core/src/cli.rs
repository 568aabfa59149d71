//! Command-line front end. `run` parses arguments, resolves configuration
//! (flag over file over default) and dispatches to a subcommand.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Config;
use crate::domain::UserGraphs;
use crate::error::{Error, Result};
use crate::eval::{evaluate, rank_targets, Metrics, MetricsReport, SeedResult};
use crate::export;
use crate::ingest::{build_split, k_core, parse_dir, Dataset, DatasetStats, LeaveOneOutSplit};
use crate::kbase::KnowledgeBase;
use crate::llm::BackendKind;
use crate::pipeline::{self, build_all_graphs, Services};
use crate::recommend::{
    build_examples, load_checkpoint, save_checkpoint, train, Checkpoint, DataSources, ExampleSet, Model, ModelConfig, Variant,
};
use crate::synth::{generate, SynthConfig};

/// Knowledge table written next to synthetic datasets and picked up by
/// `build-graphs` when no table is configured.
pub const KNOWLEDGE_FILE: &str = "knowledge.json";

#[derive(Parser, Debug)]
#[command(name = "llmrg", version, about = "Reasoning graphs for sequential recommendation")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    /// Verification threshold, 0..=101.
    #[arg(long, global = true)]
    pub tau: Option<u32>,
    /// Number of recent items kept as model input.
    #[arg(long = "l-tru", global = true)]
    pub l_tru: Option<usize>,
    /// off, error, warn (default), info, debug or trace.
    #[arg(long = "log-level", global = true)]
    pub log_level: Option<log::LevelFilter>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendArg {
    Mock,
    Http,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum VariantArg {
    Full,
    NoDivergent,
    NoVerification,
    BaseOnly,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoDivergent => Variant::NoDivergent,
            VariantArg::NoVerification => Variant::NoVerification,
            VariantArg::BaseOnly => Variant::BaseOnly,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum GraphFormat {
    Dot,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum View {
    Test,
    Train,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a raw dataset (or generate a synthetic one) and write dataset.json and split.json.
    Ingest {
        /// Directory holding ratings.dat/movies.dat or Amazon review files.
        #[arg(long, conflicts_with = "synthetic")]
        input: Option<PathBuf>,
        /// Generate a synthetic corpus with planted attribute structure.
        #[arg(long)]
        synthetic: bool,
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 200)]
        items: usize,
        /// Keep only users and items with at least this many interactions.
        #[arg(long = "min-interactions")]
        min_interactions: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print dataset statistics.
    Stats {
        #[arg(long, required = true)]
        dataset: Vec<PathBuf>,
        #[arg(long = "min-interactions")]
        min_interactions: Option<usize>,
    },
    /// Build reasoning and divergent graphs for every user.
    BuildGraphs {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Persistent knowledge base file, replayed on start and appended to.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Append one JSON line per verification to this file.
        #[arg(long)]
        audit: Option<PathBuf>,
        #[arg(long = "no-verify")]
        no_verify: bool,
        #[arg(long = "no-divergent")]
        no_divergent: bool,
    },
    /// Train one model and write a checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Retrain per seed and report HR@{5,10} and NDCG@{5,10}, or score one checkpoint.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        variant: Vec<VariantArg>,
        /// Comma-separated seeds; defaults to the configured list.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Score this checkpoint instead of retraining.
        #[arg(long, conflicts_with_all = ["variant", "seeds"])]
        model: Option<PathBuf>,
        /// Directory for report JSON and per-seed CSV files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-n items for one user.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        user: String,
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Render one user's graphs.
    ExportGraph {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long, value_enum, default_value = "dot")]
        format: GraphFormat,
        #[arg(long, value_enum, default_value = "test")]
        view: View,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Windowed model-access frequency from a graph build.
    CacheStats {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long, default_value_t = 300)]
        window: usize,
        /// Write the per-step series as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Where training data lives. Anything omitted is taken from the graph
/// build summary or, for a saved model, from its checkpoint.
#[derive(Args, Debug, Clone, Default)]
struct DataArgs {
    /// Graph directory written by build-graphs.
    #[arg(long)]
    graphs: Option<PathBuf>,
    /// Directory holding split.json; defaults to the graph directory.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Dataset directory; defaults to the one graphs were built from.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

impl DataArgs {
    fn resolve(self, saved: Option<&DataSources>) -> std::result::Result<DataSources, Failure> {
        let explicit = self.graphs.is_some();
        let graphs = self
            .graphs
            .or_else(|| saved.map(|s| s.graphs.clone()))
            .ok_or_else(|| Failure::Usage("--graphs is required".into()))?;
        let split = match (self.split, explicit) {
            (Some(s), _) => s,
            (None, true) => graphs.clone(),
            (None, false) => saved.map(|s| s.split.clone()).unwrap_or_else(|| graphs.clone()),
        };
        let dataset = match self.dataset {
            Some(d) => d,
            None => {
                let recorded = if explicit { None } else { saved.map(|s| s.dataset.clone()) };
                match recorded {
                    Some(d) => d,
                    None => pipeline::load_summary(&graphs)?.dataset.ok_or_else(|| {
                        Failure::Usage("the graph summary names no dataset; pass --dataset".into())
                    })?,
                }
            }
        };
        Ok(DataSources { dataset, graphs, split })
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Runs the command line with `argv` (program name first) and returns the
/// process exit code: 0 on success, 1 on usage errors, 2 on runtime errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// As [`run`], writing command output to `out` and diagnostics to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.global.log_level.unwrap_or(log::LevelFilter::Warn))
        .format_timestamp(None)
        .try_init();
    let config = match resolve_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    match dispatch(cli.command, config, out) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n\nRun with --help for usage.");
            1
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

/// Built-in defaults, overlaid by the config file, overlaid by flags.
pub fn resolve_config(args: &GlobalArgs) -> Result<Config> {
    let mut cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(b) = args.backend {
        cfg.backend.kind = match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Http => BackendKind::Http,
        };
    }
    if let Some(tau) = args.tau {
        cfg.graph.tau = tau;
    }
    if let Some(l) = args.l_tru {
        cfg.graph.l_tru = l;
        cfg.train.l_tru = l;
    }
    if let Some(j) = args.jobs {
        cfg.graph.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(command: Command, config: Config, out: &mut dyn Write) -> CliResult {
    match command {
        Command::Ingest {
            input,
            synthetic,
            users,
            items,
            min_interactions,
            out: dir,
        } => {
            let mut dataset = match (input, synthetic) {
                (Some(path), _) => {
                    let (ds, report) = parse_dir(&path)?;
                    log::info!("ingest: {report:?}");
                    ds
                }
                (None, true) => {
                    let corpus = generate(&SynthConfig {
                        n_users: users,
                        n_items: items,
                        seed: config.seed,
                        ..SynthConfig::default()
                    })?;
                    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    write_file(&dir.join(KNOWLEDGE_FILE), &serde_json::to_string_pretty(&corpus.knowledge).map_err(Error::from)?)?;
                    corpus.dataset
                }
                (None, false) => return Err(Failure::Usage("ingest needs --input or --synthetic".into())),
            };
            if let Some(k) = min_interactions {
                dataset = k_core(&dataset, k)?;
            }
            dataset.save(&dir)?;
            let split = build_split(&dataset.sequences, config.graph.l_tru)?;
            pipeline::save_split(&dir, &split)?;
            writeln!(out, "{}", DatasetStats::header()).map_err(io_out)?;
            writeln!(out, "{}", DatasetStats::compute(&dataset).row(&display_name(&dir))).map_err(io_out)?;
            Ok(())
        }
        Command::Stats {
            dataset,
            min_interactions,
        } => {
            writeln!(out, "{}", DatasetStats::header()).map_err(io_out)?;
            for path in dataset {
                let (mut ds, _) = parse_dir(&path)?;
                if let Some(k) = min_interactions {
                    ds = k_core(&ds, k)?;
                }
                writeln!(out, "{}", DatasetStats::compute(&ds).row(&display_name(&path))).map_err(io_out)?;
            }
            Ok(())
        }
        Command::BuildGraphs {
            dataset: data_dir,
            out: dir,
            cache,
            audit,
            no_verify,
            no_divergent,
        } => {
            let mut config = config;
            config.graph.verify &= !no_verify;
            config.graph.divergent &= !no_divergent;
            if config.oracle.knowledge.is_none() && data_dir.join(KNOWLEDGE_FILE).is_file() {
                config.oracle.knowledge = Some(data_dir.join(KNOWLEDGE_FILE));
            }
            let dataset = Dataset::load(&data_dir)?;
            let split = dataset_split(&data_dir, &dataset, &config)?;
            let kbase = match &cache {
                Some(path) => KnowledgeBase::open(path, config.graph.kbase_capacity)?,
                None => KnowledgeBase::new(config.graph.kbase_capacity),
            };
            let services = Services::new(&config, &dataset.catalog, kbase, audit.as_deref())?;
            let (graphs, mut summary) = build_all_graphs(&dataset, &split, &config, &services)?;
            summary.dataset = Some(std::fs::canonicalize(&data_dir).unwrap_or(data_dir));
            pipeline::save_graphs(&dir, &graphs)?;
            pipeline::save_split(&dir, &split)?;
            pipeline::save_telemetry(&dir, &services.kbase.stats())?;
            pipeline::save_summary(&dir, &summary)?;
            let s = &summary.stats;
            writeln!(
                out,
                "users {}  llm accesses {}  chains generated {}  retained {}  from cache {}  fallbacks {}",
                summary.users, summary.llm_accesses, s.generated, s.retained, s.cached, s.fallbacks
            )
            .map_err(io_out)?;
            Ok(())
        }
        Command::Train {
            data,
            out: path,
            variant,
            epochs,
            lr,
        } => {
            let mut cfg = config.train.clone();
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(lr) = lr {
                cfg.learning_rate = lr;
            }
            let sources = data.resolve(None)?;
            let (ds, examples) = load_examples(&sources, cfg.buckets)?;
            let mut model = Model::new(ModelConfig::from_train(&cfg, ds.catalog.len(), variant.into()), cfg.seed, cfg.init_std)?;
            let report = train(&mut model, &examples.train, &cfg)?;
            let final_loss = report.loss_history.last().copied();
            save_checkpoint(
                &path,
                &Checkpoint {
                    model,
                    loss_history: report.loss_history,
                    sources: Some(absolute(sources)),
                },
            )?;
            match final_loss {
                Some(l) => writeln!(out, "trained {} steps, final loss {l:.5}", report.steps),
                None => writeln!(out, "no training examples"),
            }
            .map_err(io_out)?;
            Ok(())
        }
        Command::Evaluate {
            data,
            variant,
            seeds,
            model,
            out: out_dir,
        } => {
            let ckpt = model.map(|p| load_checkpoint(&p)).transpose()?;
            let sources = data.resolve(ckpt.as_ref().and_then(|c| c.sources.as_ref()))?;
            let buckets = ckpt.as_ref().map_or(config.train.buckets, |c| c.model.config.buckets);
            let (ds, examples) = load_examples(&sources, buckets)?;
            let pool = pipeline::thread_pool(config.graph.jobs)?;
            let reports = match ckpt {
                Some(ckpt) => {
                    check_model(&ckpt.model, ds.catalog.len())?;
                    let ranks = rank_targets(&ckpt.model, &examples.test, pool.as_ref());
                    let result = SeedResult {
                        seed: config.train.seed,
                        metrics: Metrics::from_ranks(&ranks),
                        users: ranks.len(),
                        final_loss: ckpt.loss_history.last().copied(),
                    };
                    vec![MetricsReport::from_seeds(ckpt.model.config.variant, vec![result], examples.missing_graphs)]
                }
                None => {
                    let variants: Vec<Variant> = if variant.is_empty() {
                        vec![Variant::Full]
                    } else {
                        variant.into_iter().map(Variant::from).collect()
                    };
                    let seeds = if seeds.is_empty() { config.eval_seeds.clone() } else { seeds };
                    variants
                        .into_iter()
                        .map(|v| evaluate(&examples, ds.catalog.len(), &config.train, v, &seeds, pool.as_ref()))
                        .collect::<Result<_>>()?
                }
            };
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for r in &reports {
                    let name = r.variant.as_str();
                    write_file(&dir.join(format!("{name}.json")), &(r.to_json()? + "\n"))?;
                    write_file(&dir.join(format!("{name}.csv")), &r.to_csv())?;
                }
            }
            let refs: Vec<&MetricsReport> = reports.iter().collect();
            write!(out, "{}", MetricsReport::table(&refs)).map_err(io_out)?;
            Ok(())
        }
        Command::Predict { model, data, user, n } => {
            let ckpt = load_checkpoint(&model)?;
            let sources = data.resolve(ckpt.sources.as_ref())?;
            let (ds, examples) = load_examples(&sources, ckpt.model.config.buckets)?;
            check_model(&ckpt.model, ds.catalog.len())?;
            let Some(i) = examples.test_users.iter().position(|u| *u == user) else {
                return Err(Error::invalid(format!("no graphs or split entry for user {user:?}")).into());
            };
            let ex = &examples.test[i];
            let scores = ckpt.model.scores(ex);
            for (rank, pos) in ckpt.model.predict_top_n(ex, n).into_iter().enumerate() {
                let item = ds.catalog.item_at(pos);
                writeln!(out, "{}\t{}\t{}\t{:.6}", rank + 1, item.id, item.title, scores[pos]).map_err(io_out)?;
            }
            Ok(())
        }
        Command::ExportGraph {
            graphs,
            user,
            format,
            view,
            out: path,
        } => {
            let g: UserGraphs = pipeline::load_user_graphs(&graphs, &user)?;
            let pair = match view {
                View::Test => &g.test,
                View::Train => &g.train,
            };
            let text = match format {
                GraphFormat::Dot => export::to_dot(&user, pair),
                GraphFormat::Json => export::to_json(pair)?,
            };
            match path {
                Some(p) => write_file(&p, &text)?,
                None => write!(out, "{text}").map_err(io_out)?,
            }
            Ok(())
        }
        Command::CacheStats { graphs, window, csv } => {
            if window == 0 {
                return Err(Failure::Usage("--window must be positive".into()));
            }
            let t = pipeline::load_telemetry(&graphs)?;
            let blocks = t.block_access_frequency(window);
            writeln!(
                out,
                "steps {}  lookups {}  hits {}  reasoning calls {}  other calls {}",
                t.steps.len(),
                t.lookups,
                t.hits,
                t.calls,
                t.other_calls
            )
            .map_err(io_out)?;
            for (i, f) in blocks.iter().enumerate() {
                writeln!(out, "window {:>4}  accesses/step {f:.4}", i + 1).map_err(io_out)?;
            }
            if let (Some(first), Some(last)) = (blocks.first(), blocks.last()) {
                if blocks.len() > 1 && *first > 0.0 {
                    writeln!(out, "change first to last window: {:+.1}%", 100.0 * (last - first) / first).map_err(io_out)?;
                }
            }
            if let Some(p) = csv {
                write_file(&p, &t.to_csv(window))?;
            }
            Ok(())
        }
    }
}

fn io_out(e: std::io::Error) -> Failure {
    Failure::Runtime(Error::io("<output>", e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// The split saved by `ingest` when present, else one built from the dataset.
fn dataset_split(dir: &Path, dataset: &Dataset, config: &Config) -> Result<LeaveOneOutSplit> {
    if dir.join(pipeline::SPLIT_FILE).is_file() {
        pipeline::load_split(dir)
    } else {
        build_split(&dataset.sequences, config.graph.l_tru)
    }
}

fn absolute(s: DataSources) -> DataSources {
    let abs = |p: PathBuf| std::fs::canonicalize(&p).unwrap_or(p);
    DataSources {
        dataset: abs(s.dataset),
        graphs: abs(s.graphs),
        split: abs(s.split),
    }
}

/// Examples with graph features hashed into `buckets` rows.
fn load_examples(sources: &DataSources, buckets: usize) -> Result<(Dataset, ExampleSet)> {
    let ds = Dataset::load(&sources.dataset)?;
    let split = pipeline::load_split(&sources.split)?;
    let g: BTreeMap<String, UserGraphs> = pipeline::load_graphs(&sources.graphs)?;
    let examples = build_examples(&split, &g, &ds.catalog, buckets)?;
    Ok((ds, examples))
}

fn check_model(model: &Model, n_items: usize) -> Result<()> {
    if model.config.n_items != n_items {
        return Err(Error::invalid(format!(
            "model was trained on {} items but the catalog has {n_items}",
            model.config.n_items
        )));
    }
    Ok(())
}
