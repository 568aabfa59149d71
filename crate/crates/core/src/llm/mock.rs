//! Offline oracle backend driven by a knowledge table.
//!
//! The table maps each attribute to related concepts and to an ordered list of
//! related item titles. The order encodes transitions: extending a chain that
//! ends at item `x` under attribute `a` proposes the titles after `x` in `a`'s
//! list. A chain is coherent when every item it names is listed under every
//! attribute it names. Abductive fills on coherent chains return the masked
//! element with probability `fidelity`; everything else gets a decoy.
//!
//! Randomness is derived from (seed, request content), so outputs do not depend
//! on call order or concurrency.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::parse::ChainToken;
use super::{Backend, BackendError, ChainView, Prompt, TaskKind};
use crate::domain::{canonicalize_label, Catalog};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    #[serde(default)]
    pub concepts: Vec<String>,
    #[serde(default)]
    pub items: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnowledgeTable {
    pub attributes: BTreeMap<String, KnowledgeEntry>,
}

impl KnowledgeTable {
    /// Every catalog attribute, related to the items carrying it in catalog order.
    pub fn from_catalog(catalog: &Catalog) -> Self {
        let mut attributes: BTreeMap<String, KnowledgeEntry> = BTreeMap::new();
        for item in catalog.items() {
            let Ok(title) = canonicalize_label(&item.title) else { continue };
            for a in &item.attributes {
                let Ok(a) = canonicalize_label(a) else { continue };
                let entry = attributes.entry(a.clone()).or_insert_with(|| KnowledgeEntry {
                    concepts: vec![format!("taste for {a}"), format!("{a} mood")],
                    items: Vec::new(),
                });
                entry.items.push(title.clone());
            }
        }
        KnowledgeTable { attributes }
    }

    /// Canonicalizes every label in the table.
    pub fn canonicalized(&self) -> Result<Self> {
        let mut attributes = BTreeMap::new();
        for (a, e) in &self.attributes {
            let entry = KnowledgeEntry {
                concepts: e.concepts.iter().map(|c| canonicalize_label(c)).collect::<Result<_>>()?,
                items: e.items.iter().map(|c| canonicalize_label(c)).collect::<Result<_>>()?,
            };
            attributes.insert(canonicalize_label(a)?, entry);
        }
        Ok(KnowledgeTable { attributes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockOracleConfig {
    pub knowledge: KnowledgeTable,
    /// Probability an abductive fill on a coherent chain reproduces the original.
    pub fidelity: f64,
    /// Probability a generated chain routes through an unrelated attribute, and
    /// that each divergent continuation is an unrelated title.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for MockOracleConfig {
    fn default() -> Self {
        MockOracleConfig {
            knowledge: KnowledgeTable::default(),
            fidelity: 0.9,
            noise_rate: 0.0,
            seed: 0,
        }
    }
}

impl MockOracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fidelity) {
            return Err(Error::BackendConfig(format!("fidelity {} outside [0, 1]", self.fidelity)));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::BackendConfig(format!("noise_rate {} outside [0, 1]", self.noise_rate)));
        }
        Ok(())
    }
}

pub struct MockBackend {
    fidelity: f64,
    noise_rate: f64,
    seed: u64,
    table: KnowledgeTable,
    all_titles: Vec<String>,
    all_attributes: Vec<String>,
}

impl MockBackend {
    pub fn new(config: MockOracleConfig) -> Result<Self> {
        config.validate()?;
        let table = config.knowledge.canonicalized()?;
        let all_titles: BTreeSet<String> = table.attributes.values().flat_map(|e| e.items.iter().cloned()).collect();
        Ok(MockBackend {
            fidelity: config.fidelity,
            noise_rate: config.noise_rate,
            seed: config.seed,
            all_attributes: table.attributes.keys().cloned().collect(),
            all_titles: all_titles.into_iter().collect(),
            table,
        })
    }

    fn rng_for(&self, prompt: &Prompt) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(prompt.task_kind.as_str().as_bytes());
        h.update(prompt.render().as_bytes());
        if let Some(held) = &prompt.fields.held_out {
            h.update(b"\x00held\x00");
            h.update(held.as_bytes());
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn concept(&self, attr: &str, rng: &mut ChaCha8Rng) -> String {
        self.table
            .attributes
            .get(attr)
            .and_then(|e| e.concepts.choose(rng).cloned())
            .unwrap_or_else(|| format!("interest in {attr}"))
    }

    fn reason(&self, prompt: &Prompt, rng: &mut ChaCha8Rng) -> String {
        let f = &prompt.fields;
        let item = f.next_item.as_ref().expect("validated by build_prompt");
        let Ok(title) = canonicalize_label(&item.title) else {
            return String::new();
        };
        let user: BTreeSet<String> = f
            .user_attributes
            .iter()
            .flatten()
            .filter_map(|a| canonicalize_label(a).ok())
            .collect();
        let own: Vec<String> = item.attributes.iter().filter_map(|a| canonicalize_label(a).ok()).collect();
        let (mut attrs, rest): (Vec<String>, Vec<String>) = own.iter().cloned().partition(|a| user.contains(a));
        attrs.extend(rest);
        let max = f.max_chains.unwrap_or(3).max(1);
        let existing = f.existing_chains.clone().unwrap_or_default();

        if attrs.is_empty() {
            return format!("CHAIN: personal taste -> TARGET[{title}]");
        }
        let mut lines = Vec::new();
        for a in attrs.iter().take(max) {
            let roll: f64 = rng.random();
            let unrelated: Vec<&String> = self.all_attributes.iter().filter(|k| !own.contains(k)).collect();
            if roll < self.noise_rate && !unrelated.is_empty() {
                let wrong = unrelated.choose(rng).expect("non-empty").to_string();
                let concept = self.concept(&wrong, rng);
                lines.push(format!("CHAIN: ATTR[{wrong}] -> {concept} -> TARGET[{title}]"));
                continue;
            }
            let concept = self.concept(a, rng);
            let parent = existing.iter().rev().find(|c| {
                c.tokens.contains(&ChainToken::Attr(a.clone()))
                    && matches!(c.tokens.last(), Some(ChainToken::Target(t)) if *t != title)
            });
            match parent {
                Some(p) => {
                    let ptitle = p.tokens.last().and_then(ChainToken::label).unwrap_or_default();
                    lines.push(format!(
                        "CHAIN({}): ITEM[{ptitle}] -> ATTR[{a}] -> {concept} -> TARGET[{title}]",
                        p.id
                    ));
                }
                None => lines.push(format!("CHAIN: ATTR[{a}] -> {concept} -> TARGET[{title}]")),
            }
        }
        lines.join("\n")
    }

    fn extend(&self, prompt: &Prompt, rng: &mut ChaCha8Rng) -> String {
        let f = &prompt.fields;
        let chain = f.chain.as_ref().expect("validated by build_prompt");
        let k = f.k.unwrap_or(1);
        let in_chain: BTreeSet<&str> = chain
            .tokens
            .iter()
            .filter(|t| matches!(t, ChainToken::Item(_) | ChainToken::Target(_)))
            .filter_map(ChainToken::label)
            .collect();
        let target = chain.tokens.last().and_then(ChainToken::label).unwrap_or_default();
        let entry = chain.tokens.iter().find_map(|t| match t {
            ChainToken::Attr(a) => self.table.attributes.get(a),
            _ => None,
        });
        let pool: Vec<String> = match entry {
            Some(e) => match e.items.iter().position(|t| t == target) {
                Some(pos) => e.items[pos + 1..].iter().chain(&e.items[..pos]).cloned().collect(),
                None => {
                    let mut v = e.items.clone();
                    shuffle(&mut v, rng);
                    v
                }
            },
            None => {
                let mut v = self.all_titles.clone();
                shuffle(&mut v, rng);
                v
            }
        };
        let mut pool = pool.into_iter().filter(|t| !in_chain.contains(t.as_str())).peekable();
        let mut out: Vec<String> = Vec::with_capacity(k);
        while out.len() < k && pool.peek().is_some() {
            let roll: f64 = rng.random();
            let stray: Vec<&String> = self
                .all_titles
                .iter()
                .filter(|t| {
                    !in_chain.contains(t.as_str())
                        && !out.contains(t)
                        && !entry.is_some_and(|e| e.items.contains(t))
                })
                .collect();
            if roll < self.noise_rate && !stray.is_empty() {
                // An invented continuation unrelated to the chain's attribute.
                out.push(stray.choose(rng).expect("non-empty").to_string());
            } else if let Some(t) = pool.next() {
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
        out.iter().map(|t| format!("ITEM[{t}]")).collect::<Vec<_>>().join("\n")
    }

    fn coherent(&self, chain: &ChainView, held_out: &str) -> bool {
        let mut attrs = Vec::new();
        let mut items = Vec::new();
        for t in &chain.tokens {
            match t {
                ChainToken::Attr(a) => attrs.push(a.as_str()),
                ChainToken::Item(i) | ChainToken::Target(i) => items.push(i.as_str()),
                ChainToken::Mask => {}
                ChainToken::Concept(_) => {}
            }
        }
        match chain.tokens.iter().position(|t| *t == ChainToken::Mask) {
            Some(_) if self.all_attributes.iter().any(|a| a == held_out) && !self.all_titles.iter().any(|t| t == held_out) => {
                attrs.push(held_out)
            }
            Some(_) => items.push(held_out),
            None => {}
        }
        if attrs.is_empty() {
            return items.iter().all(|i| self.all_titles.iter().any(|t| t == i));
        }
        attrs.iter().all(|a| match self.table.attributes.get(*a) {
            Some(e) => items.iter().all(|i| e.items.iter().any(|t| t == i)),
            None => false,
        })
    }

    fn abduce(&self, prompt: &Prompt, rng: &mut ChaCha8Rng) -> String {
        let f = &prompt.fields;
        let chain = f.masked_chain.as_ref().expect("validated by build_prompt");
        let held = f.held_out.clone().unwrap_or_default();
        let roll: f64 = rng.random();
        if !held.is_empty() && self.coherent(chain, &held) && roll < self.fidelity {
            return format!("FILL[{held}]");
        }
        let is_attr = matches!(f.masked_kind, Some(crate::domain::NodeKind::Attribute));
        let pool = if is_attr { &self.all_attributes } else { &self.all_titles };
        let decoys: Vec<&String> = pool.iter().filter(|p| **p != held).collect();
        match decoys.choose(rng) {
            Some(d) => format!("FILL[{d}]"),
            None if held == "unknown" => "FILL[none]".to_string(),
            None => "FILL[unknown]".to_string(),
        }
    }
}

fn shuffle(v: &mut [String], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}

impl Backend for MockBackend {
    fn complete(&self, prompt: &Prompt) -> std::result::Result<String, BackendError> {
        let mut rng = self.rng_for(prompt);
        Ok(match prompt.task_kind {
            TaskKind::ChainReasoning => self.reason(prompt, &mut rng),
            TaskKind::DivergentExtension => self.extend(prompt, &mut rng),
            TaskKind::AbductiveFill => self.abduce(prompt, &mut rng),
        })
    }
}
