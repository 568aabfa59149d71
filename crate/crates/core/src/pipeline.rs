//! Wiring shared by the command line, the acceptance suite and the C API:
//! backend construction, graph building for a whole split, and graph files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::domain::{Catalog, UserGraphs};
use crate::error::{Error, Result};
use crate::ground::CatalogIndex;
use crate::ingest::{Dataset, LeaveOneOutSplit};
use crate::kbase::{CacheTelemetry, KnowledgeBase};
use crate::llm::{BackendKind, KnowledgeTable, LlmClient, MockOracleConfig};
use crate::reason::{build_graph_pair, Deps, ReasonStats, TitleIndex};
use crate::verify::Verifier;

/// The oracle's knowledge table: from the configured file, else derived from
/// catalog attributes.
pub fn knowledge_table(config: &Config, catalog: &Catalog) -> Result<KnowledgeTable> {
    match &config.oracle.knowledge {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let table: KnowledgeTable = serde_json::from_str(&text)?;
            table.canonicalized()
        }
        None => Ok(KnowledgeTable::from_catalog(catalog)),
    }
}

pub fn make_client(config: &Config, catalog: &Catalog) -> Result<LlmClient> {
    let mock = match config.backend.kind {
        BackendKind::Mock => Some(MockOracleConfig {
            knowledge: knowledge_table(config, catalog)?,
            fidelity: config.oracle.fidelity,
            noise_rate: config.oracle.noise_rate,
            seed: config.seed,
        }),
        BackendKind::Http => None,
    };
    LlmClient::from_config(&config.backend, mock)
}

/// A dedicated pool when more than one job is requested.
pub fn thread_pool(jobs: usize) -> Result<Option<rayon::ThreadPool>> {
    if jobs <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map(Some)
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

/// Everything graph construction needs beyond the data itself.
pub struct Services {
    pub index: CatalogIndex,
    pub titles: TitleIndex,
    pub client: LlmClient,
    pub kbase: KnowledgeBase,
    pub verifier: Verifier,
    pub pool: Option<rayon::ThreadPool>,
}

impl Services {
    pub fn new(config: &Config, catalog: &Catalog, kbase: KnowledgeBase, audit_log: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let mut verifier = Verifier::new(config.graph.tau, config.seed)?;
        if let Some(path) = audit_log {
            verifier = verifier.with_audit_log(path)?;
        }
        Ok(Services {
            index: CatalogIndex::from_catalog(catalog),
            titles: TitleIndex::new(catalog),
            client: make_client(config, catalog)?,
            kbase,
            verifier,
            pool: thread_pool(config.graph.jobs)?,
        })
    }

    pub fn deps<'a>(&'a self, catalog: &'a Catalog) -> Deps<'a> {
        Deps {
            catalog,
            index: &self.index,
            titles: &self.titles,
            client: &self.client,
            kbase: &self.kbase,
            verifier: &self.verifier,
            pool: self.pool.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    /// Dataset the graphs were built from.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub users: usize,
    pub stats: ReasonStats,
    pub llm_accesses: u64,
}

/// Builds both graph views for every user in the split. Users are processed
/// in split order so the knowledge base evolves deterministically.
pub fn build_all_graphs(
    dataset: &Dataset,
    split: &LeaveOneOutSplit,
    config: &Config,
    services: &Services,
) -> Result<(BTreeMap<String, UserGraphs>, BuildSummary)> {
    let deps = services.deps(&dataset.catalog);
    let mut graphs = BTreeMap::new();
    let mut summary = BuildSummary::default();
    let start = services.client.access_count();
    for (i, entry) in split.entries.iter().enumerate() {
        let attrs = dataset
            .sequence(&entry.user)
            .map(|s| s.attributes.clone())
            .unwrap_or_default();
        let (train, s1) = build_graph_pair(&entry.user, &entry.train_input, &attrs, &config.graph, &deps)?;
        let (test, s2) = build_graph_pair(&entry.user, &entry.input, &attrs, &config.graph, &deps)?;
        summary.stats += s1;
        summary.stats += s2;
        graphs.insert(
            entry.user.clone(),
            UserGraphs {
                user: entry.user.clone(),
                train,
                test,
            },
        );
        if (i + 1) % 100 == 0 {
            log::info!("graphs built for {} of {} users", i + 1, split.entries.len());
        }
    }
    summary.users = graphs.len();
    summary.llm_accesses = services.client.access_count() - start;
    Ok((graphs, summary))
}

pub const USERS_DIR: &str = "users";
pub const TELEMETRY_FILE: &str = "telemetry.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SPLIT_FILE: &str = "split.json";

/// File name for a user id: ASCII alphanumerics, `-` and `_` pass through,
/// every other byte is written as `%XX`.
pub fn user_file_name(user: &str) -> String {
    let mut out = String::with_capacity(user.len() + 5);
    for b in user.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out.push_str(".json");
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes one JSON file per user under `dir/users`.
pub fn save_graphs(dir: &Path, graphs: &BTreeMap<String, UserGraphs>) -> Result<()> {
    let users = dir.join(USERS_DIR);
    std::fs::create_dir_all(&users).map_err(|e| Error::io(&users, e))?;
    for (user, g) in graphs {
        write_json(&users.join(user_file_name(user)), g)?;
    }
    Ok(())
}

pub fn load_user_graphs(dir: &Path, user: &str) -> Result<UserGraphs> {
    read_json(&dir.join(USERS_DIR).join(user_file_name(user)))
}

pub fn load_graphs(dir: &Path) -> Result<BTreeMap<String, UserGraphs>> {
    let users = dir.join(USERS_DIR);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&users)
        .map_err(|e| Error::io(&users, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&users, err)))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "json"));
    paths.sort();
    let mut out = BTreeMap::new();
    for p in paths {
        let g: UserGraphs = read_json(&p)?;
        out.insert(g.user.clone(), g);
    }
    Ok(out)
}

pub fn save_split(dir: &Path, split: &LeaveOneOutSplit) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(SPLIT_FILE), split)
}

pub fn load_split(dir: &Path) -> Result<LeaveOneOutSplit> {
    read_json(&dir.join(SPLIT_FILE))
}

pub fn save_telemetry(dir: &Path, telemetry: &CacheTelemetry) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(TELEMETRY_FILE), telemetry)
}

pub fn load_telemetry(dir: &Path) -> Result<CacheTelemetry> {
    read_json(&dir.join(TELEMETRY_FILE))
}

pub fn save_summary(dir: &Path, summary: &BuildSummary) -> Result<()> {
    write_json(&dir.join(SUMMARY_FILE), summary)
}

pub fn load_summary(dir: &Path) -> Result<BuildSummary> {
    read_json(&dir.join(SUMMARY_FILE))
}
