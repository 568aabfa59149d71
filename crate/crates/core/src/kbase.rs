//! Knowledge base of validated reasoning chains.
//!
//! Entries are keyed by chain signature and indexed by target item so the
//! reasoning step can ask for "a relevant chain" before calling the model.
//! Only chains scoring at least the insertion threshold are stored. When
//! full, the entry touched least recently (insert or hit) is evicted.
//!
//! Telemetry is recorded per reasoning step: a step begins with a query and
//! accumulates the model calls made while serving it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::domain::{ItemId, NodeKind, ReasoningChain, Signature};
use crate::error::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBaseEntry {
    pub signature: Signature,
    pub chain: ReasoningChain,
    pub score: u8,
    pub tau_at_insert: u32,
    pub insert_step: u64,
    pub hit_count: u64,
    pub last_hit_step: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Accepted,
    Rejected,
    AlreadyPresent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallKind {
    Reasoning,
    Verification,
    Extension,
    /// Second reasoning attempt after an unparseable response.
    Reprompt,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub hit: bool,
    pub reasoning_calls: u64,
    pub other_calls: u64,
}

impl StepRecord {
    pub fn accesses(&self) -> u64 {
        self.reasoning_calls + self.other_calls
    }
}

/// Snapshot of cache usage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheTelemetry {
    pub lookups: u64,
    pub hits: u64,
    /// Reasoning completions issued on misses.
    pub calls: u64,
    /// Verification and extension completions.
    pub other_calls: u64,
    pub steps: Vec<StepRecord>,
}

impl CacheTelemetry {
    pub fn total_accesses(&self) -> u64 {
        self.calls + self.other_calls
    }

    /// Mean model accesses per step over a trailing window ending at each step.
    pub fn windowed_access_frequency(&self, window: usize) -> Vec<(u64, f64)> {
        let window = window.max(1);
        let mut out = Vec::with_capacity(self.steps.len());
        let mut running = 0u64;
        for (i, rec) in self.steps.iter().enumerate() {
            running += rec.accesses();
            if i >= window {
                running -= self.steps[i - window].accesses();
            }
            let n = (i + 1).min(window) as f64;
            out.push((rec.step, running as f64 / n));
        }
        out
    }

    /// Mean accesses per step over consecutive, non-overlapping windows.
    pub fn block_access_frequency(&self, window: usize) -> Vec<f64> {
        self.steps
            .chunks(window.max(1))
            .map(|c| c.iter().map(|r| r.accesses() as f64).sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn to_csv(&self, window: usize) -> String {
        let mut s = String::from("step,access_frequency\n");
        for (step, f) in self.windowed_access_frequency(window) {
            s.push_str(&format!("{step},{f:.6}\n"));
        }
        s
    }

    /// hits <= lookups and calls == lookups - hits, at the end and at every step.
    pub fn identities_hold(&self) -> bool {
        if self.hits > self.lookups || self.calls != self.lookups - self.hits {
            return false;
        }
        self.steps
            .iter()
            .all(|s| if s.hit { s.reasoning_calls == 0 } else { s.reasoning_calls == 1 })
    }
}

#[derive(Serialize, Deserialize)]
struct LogRecord {
    signature: Signature,
    chain: ReasoningChain,
    score: u8,
    insert_step: u64,
    #[serde(default)]
    tau: u32,
}

struct Inner {
    entries: HashMap<Signature, KnowledgeBaseEntry>,
    by_target: BTreeMap<ItemId, BTreeSet<Signature>>,
    recency: BTreeMap<u64, Signature>,
    touched_at: HashMap<Signature, u64>,
    tick: u64,
    capacity: usize,
    telemetry: CacheTelemetry,
}

impl Inner {
    fn touch(&mut self, sig: Signature) {
        if let Some(old) = self.touched_at.remove(&sig) {
            self.recency.remove(&old);
        }
        self.tick += 1;
        self.recency.insert(self.tick, sig);
        self.touched_at.insert(sig, self.tick);
    }

    fn evict_one(&mut self) {
        let Some((&tick, &sig)) = self.recency.iter().next() else {
            return;
        };
        self.recency.remove(&tick);
        self.touched_at.remove(&sig);
        if let Some(entry) = self.entries.remove(&sig) {
            if let Some(set) = self.by_target.get_mut(&entry.chain.target_item) {
                set.remove(&sig);
                if set.is_empty() {
                    self.by_target.remove(&entry.chain.target_item);
                }
            }
        }
    }

    fn store(&mut self, entry: KnowledgeBaseEntry) {
        while self.entries.len() >= self.capacity && !self.entries.is_empty() {
            self.evict_one();
        }
        let sig = entry.signature;
        self.by_target
            .entry(entry.chain.target_item.clone())
            .or_default()
            .insert(sig);
        self.entries.insert(sig, entry);
        self.touch(sig);
    }

    fn current_step(&self) -> u64 {
        self.telemetry.lookups
    }
}

/// Thread-safe chain cache. All operations take one lock, so a hit and an
/// eviction of the same key cannot interleave.
pub struct KnowledgeBase {
    inner: Mutex<Inner>,
    log: Option<Mutex<File>>,
    log_path: Option<PathBuf>,
}

impl KnowledgeBase {
    pub fn new(capacity: usize) -> Self {
        KnowledgeBase {
            inner: Mutex::new(Inner {
                entries: HashMap::new(),
                by_target: BTreeMap::new(),
                recency: BTreeMap::new(),
                touched_at: HashMap::new(),
                tick: 0,
                capacity: capacity.max(1),
                telemetry: CacheTelemetry::default(),
            }),
            log: None,
            log_path: None,
        }
    }

    /// Opens (or creates) an append-only cache file, replaying existing records.
    pub fn open(path: impl AsRef<Path>, capacity: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut kb = Self::new(capacity);
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut inner = kb.inner.lock().expect("kbase lock");
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: LogRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                    file: path.display().to_string(),
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
                if inner.entries.contains_key(&rec.signature) {
                    continue;
                }
                inner.store(KnowledgeBaseEntry {
                    signature: rec.signature,
                    chain: rec.chain,
                    score: rec.score,
                    tau_at_insert: rec.tau,
                    insert_step: rec.insert_step,
                    hit_count: 0,
                    last_hit_step: None,
                });
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        kb.log = Some(Mutex::new(file));
        kb.log_path = Some(path.to_path_buf());
        Ok(kb)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("kbase lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.inner.lock().expect("kbase lock").capacity
    }

    /// Exact-signature lookup. Counts as one step; a hit never reaches the model.
    pub fn lookup(&self, signature: &Signature) -> Option<KnowledgeBaseEntry> {
        let mut inner = self.inner.lock().expect("kbase lock");
        inner.telemetry.lookups += 1;
        let step = inner.current_step();
        let hit = match inner.entries.get_mut(signature) {
            Some(entry) => {
                entry.hit_count += 1;
                entry.last_hit_step = Some(step);
                Some(entry.clone())
            }
            None => None,
        };
        if hit.is_some() {
            inner.telemetry.hits += 1;
            inner.touch(*signature);
        }
        inner.telemetry.steps.push(StepRecord {
            step,
            hit: hit.is_some(),
            ..Default::default()
        });
        hit
    }

    /// Looks for cached chains explaining `target` whose attribute nodes are
    /// all in `attributes` and whose non-terminal items are all in `known_items`.
    /// Counts as one step with at most one hit.
    pub fn lookup_relevant(
        &self,
        target: &ItemId,
        attributes: &BTreeSet<String>,
        known_items: &BTreeSet<ItemId>,
        limit: usize,
    ) -> Vec<KnowledgeBaseEntry> {
        let mut inner = self.inner.lock().expect("kbase lock");
        inner.telemetry.lookups += 1;
        let step = inner.current_step();
        let candidates: Vec<Signature> = inner
            .by_target
            .get(target)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        let mut found: Vec<KnowledgeBaseEntry> = candidates
            .iter()
            .filter_map(|sig| inner.entries.get(sig))
            .filter(|e| is_relevant(&e.chain, attributes, known_items))
            .cloned()
            .collect();
        found.sort_by(|a, b| {
            b.score
                .cmp(&a.score)
                .then(a.insert_step.cmp(&b.insert_step))
                .then(a.signature.cmp(&b.signature))
        });
        found.truncate(limit);
        for e in &mut found {
            let entry = inner.entries.get_mut(&e.signature).expect("present under lock");
            entry.hit_count += 1;
            entry.last_hit_step = Some(step);
            *e = entry.clone();
        }
        for e in &found {
            inner.touch(e.signature);
        }
        let hit = !found.is_empty();
        if hit {
            inner.telemetry.hits += 1;
        }
        inner.telemetry.steps.push(StepRecord {
            step,
            hit,
            ..Default::default()
        });
        found
    }

    /// Attributes a model completion to the current step.
    pub fn record_call(&self, kind: CallKind) {
        let mut inner = self.inner.lock().expect("kbase lock");
        match kind {
            CallKind::Reasoning => inner.telemetry.calls += 1,
            _ => inner.telemetry.other_calls += 1,
        }
        if let Some(last) = inner.telemetry.steps.last_mut() {
            match kind {
                CallKind::Reasoning => last.reasoning_calls += 1,
                _ => last.other_calls += 1,
            }
        }
    }

    /// Stores a verified chain iff `score >= tau`.
    pub fn insert(
        &self,
        signature: Signature,
        chain: &ReasoningChain,
        score: u8,
        tau: u32,
    ) -> Result<InsertOutcome> {
        if u32::from(score) < tau {
            return Ok(InsertOutcome::Rejected);
        }
        let mut inner = self.inner.lock().expect("kbase lock");
        if inner.entries.contains_key(&signature) {
            return Ok(InsertOutcome::AlreadyPresent);
        }
        let insert_step = inner.current_step();
        let mut chain = chain.clone();
        chain.score = Some(score);
        if let Some(log) = &self.log {
            let rec = LogRecord {
                signature,
                chain: chain.clone(),
                score,
                insert_step,
                tau,
            };
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            let path = self.log_path.clone().unwrap_or_default();
            log.lock()
                .expect("kbase log lock")
                .write_all(line.as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        inner.store(KnowledgeBaseEntry {
            signature,
            chain,
            score,
            tau_at_insert: tau,
            insert_step,
            hit_count: 0,
            last_hit_step: None,
        });
        Ok(InsertOutcome::Accepted)
    }

    pub fn contains(&self, signature: &Signature) -> bool {
        self.inner.lock().expect("kbase lock").entries.contains_key(signature)
    }

    /// Entries sorted by signature.
    pub fn entries(&self) -> Vec<KnowledgeBaseEntry> {
        let inner = self.inner.lock().expect("kbase lock");
        let mut out: Vec<_> = inner.entries.values().cloned().collect();
        out.sort_by_key(|e| e.signature);
        out
    }

    pub fn stats(&self) -> CacheTelemetry {
        self.inner.lock().expect("kbase lock").telemetry.clone()
    }

    pub fn reset_telemetry(&self) {
        self.inner.lock().expect("kbase lock").telemetry = CacheTelemetry::default();
    }
}

fn is_relevant(
    chain: &ReasoningChain,
    attributes: &BTreeSet<String>,
    known_items: &BTreeSet<ItemId>,
) -> bool {
    let body = &chain.nodes[..chain.nodes.len() - 1];
    body.iter().all(|n| match n.kind {
        NodeKind::Attribute => attributes.contains(&n.label),
        NodeKind::Item => n.item_ref.as_ref().is_some_and(|id| known_items.contains(id)),
        NodeKind::Concept => true,
    })
}
