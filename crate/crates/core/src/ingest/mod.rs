//! Raw dataset parsing, preprocessing and leave-one-out splits.

mod amazon;
mod movielens;
mod pylit;
mod split;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use amazon::{parse_amazon, parse_amazon_str};
pub use movielens::{parse_movielens, parse_movielens_str};
pub use split::{build_split, LeaveOneOutSplit, SplitEntry};

use crate::domain::{Catalog, InteractionSequence, Item, ItemId};
use crate::error::{Error, Result};

/// Counters for records dropped or merged during parsing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: usize,
    pub unknown_items: usize,
    pub missing_fields: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub catalog: Catalog,
    pub sequences: Vec<InteractionSequence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_actions: usize,
    pub avg_length: f64,
    pub sparsity: f64,
}

impl DatasetStats {
    pub fn compute(dataset: &Dataset) -> Self {
        let n_users = dataset.sequences.len();
        let n_actions: usize = dataset.sequences.iter().map(|s| s.events.len()).sum();
        let items: HashSet<&ItemId> = dataset.sequences.iter().flat_map(|s| &s.events).collect();
        let n_items = items.len();
        let avg_length = if n_users == 0 { 0.0 } else { n_actions as f64 / n_users as f64 };
        let cells = n_users as f64 * n_items as f64;
        let sparsity = if cells == 0.0 { 0.0 } else { 1.0 - n_actions as f64 / cells };
        DatasetStats {
            n_users,
            n_items,
            n_actions,
            avg_length,
            sparsity,
        }
    }

    pub fn header() -> String {
        format!(
            "{:<12} {:>9} {:>9} {:>8} {:>11} {:>9}",
            "Dataset", "#Users", "#Items", "Avg.len", "#Actions", "Sparsity"
        )
    }

    pub fn row(&self, name: &str) -> String {
        format!(
            "{:<12} {:>9} {:>9} {:>8.1} {:>11} {:>8.2}%",
            name,
            self.n_users,
            self.n_items,
            self.avg_length,
            self.n_actions,
            100.0 * self.sparsity
        )
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.row("dataset"))
    }
}

/// One interaction in file order.
#[derive(Debug, Clone)]
pub(crate) struct RawEvent {
    pub user: String,
    pub item: ItemId,
    pub time: i64,
}

/// Groups events per user, sorts by time (stable, so ties keep file order),
/// keeps the earliest occurrence of each item and builds the catalog from the
/// items that occur.
pub(crate) fn assemble(
    events: Vec<RawEvent>,
    items: &HashMap<ItemId, Item>,
    report: &mut IngestReport,
) -> Result<Dataset> {
    let mut per_user: BTreeMap<String, Vec<(i64, ItemId)>> = BTreeMap::new();
    for e in events {
        per_user.entry(e.user).or_default().push((e.time, e.item));
    }
    let mut used: BTreeMap<ItemId, Item> = BTreeMap::new();
    let mut sequences = Vec::with_capacity(per_user.len());
    for (user, mut evs) in per_user {
        evs.sort_by_key(|(t, _)| *t);
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(evs.len());
        for (_, item) in evs {
            if seen.insert(item.clone()) {
                out.push(item);
            } else {
                report.duplicates += 1;
            }
        }
        for id in &out {
            if !used.contains_key(id) {
                used.insert(id.clone(), items[id].clone());
            }
        }
        sequences.push(InteractionSequence {
            user_id: user,
            events: out,
            attributes: Vec::new(),
        });
    }
    let catalog = Catalog::new(used.into_values().collect())?;
    Ok(Dataset { catalog, sequences })
}

/// Repeatedly drops users and items with fewer than `k` interactions.
pub fn k_core(dataset: &Dataset, k: usize) -> Result<Dataset> {
    let mut seqs: Vec<InteractionSequence> = dataset.sequences.clone();
    loop {
        let mut counts: HashMap<&ItemId, usize> = HashMap::new();
        for s in &seqs {
            for e in &s.events {
                *counts.entry(e).or_default() += 1;
            }
        }
        let keep: HashSet<ItemId> = counts.into_iter().filter(|(_, c)| *c >= k).map(|(i, _)| i.clone()).collect();
        let before: usize = seqs.iter().map(|s| s.events.len()).sum::<usize>() + seqs.len();
        let next: Vec<InteractionSequence> = seqs
            .into_iter()
            .map(|mut s| {
                s.events.retain(|e| keep.contains(e));
                s
            })
            .filter(|s| s.events.len() >= k)
            .collect();
        let after: usize = next.iter().map(|s| s.events.len()).sum::<usize>() + next.len();
        seqs = next;
        if after == before {
            break;
        }
    }
    let used: HashSet<&ItemId> = seqs.iter().flat_map(|s| &s.events).collect();
    let items = dataset.catalog.items().iter().filter(|i| used.contains(&i.id)).cloned().collect();
    Ok(Dataset {
        catalog: Catalog::new(items)?,
        sequences: seqs,
    })
}

/// Reads a text file, transparently gunzipping `*.gz`, and decoding as UTF-8
/// with a Latin-1 fallback.
pub(crate) fn read_text(path: &Path) -> Result<String> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        flate2::read::MultiGzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    })
}

pub const DATASET_FILE: &str = "dataset.json";

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(DATASET_FILE);
        let text = serde_json::to_string(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads a saved dataset from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = if dir.is_file() { dir.to_path_buf() } else { dir.join(DATASET_FILE) };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let ds: Dataset = serde_json::from_str(&text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.sequences {
            s.validate(&self.catalog)?;
        }
        Ok(())
    }

    pub fn sequence(&self, user: &str) -> Option<&InteractionSequence> {
        self.sequences.iter().find(|s| s.user_id == user)
    }
}

/// Detects the raw layout in `dir` and parses it.
pub fn parse_dir(dir: &Path) -> Result<(Dataset, IngestReport)> {
    if dir.join(DATASET_FILE).is_file() {
        return Ok((Dataset::load(dir)?, IngestReport::default()));
    }
    let ratings = dir.join("ratings.dat");
    if ratings.is_file() {
        return parse_movielens(&ratings, &dir.join("movies.dat"));
    }
    let mut reviews = None;
    let mut meta = None;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_ascii_lowercase();
        if !name.contains(".json") {
            continue;
        }
        if name.starts_with("meta") {
            meta.get_or_insert(p);
        } else if name.starts_with("reviews") || name.contains("_5.json") {
            reviews.get_or_insert(p);
        }
    }
    match reviews {
        Some(r) => parse_amazon(&r, meta.as_deref()),
        None => Err(Error::invalid(format!(
            "{}: no ratings.dat, reviews*.json or {DATASET_FILE} found",
            dir.display()
        ))),
    }
}
