//! Progressive chain construction over a user's sequence, plus the combined
//! builder that also produces the divergent graph.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::GraphConfig;
use crate::diverge::build_divergent_graph;
use crate::domain::{
    canonicalize_label, Catalog, ChainNode, ChainOrigin, GraphPair, Item, ItemId, ReasoningChain, ReasoningGraph,
    Signature,
};
use crate::error::{Error, Result};
use crate::ground::CatalogIndex;
use crate::kbase::{CallKind, KnowledgeBase};
use crate::llm::{build_prompt, parse_chains, ChainToken, ChainView, ItemView, LlmClient, ParsedChain, PayloadFields, TaskKind};
use crate::verify::Verifier;

/// Shared services for graph construction.
pub struct Deps<'a> {
    pub catalog: &'a Catalog,
    pub index: &'a CatalogIndex,
    pub titles: &'a TitleIndex,
    pub client: &'a LlmClient,
    pub kbase: &'a KnowledgeBase,
    pub verifier: &'a Verifier,
    pub pool: Option<&'a rayon::ThreadPool>,
}

/// Canonical title → item id (lowest id wins on duplicate titles).
#[derive(Debug, Clone, Default)]
pub struct TitleIndex(HashMap<String, ItemId>);

impl TitleIndex {
    pub fn new(catalog: &Catalog) -> Self {
        let mut map = HashMap::new();
        for item in catalog.items() {
            if let Ok(t) = canonicalize_label(&item.title) {
                map.entry(t).or_insert_with(|| item.id.clone());
            }
        }
        TitleIndex(map)
    }

    pub fn get(&self, title: &str) -> Option<&ItemId> {
        self.0.get(title)
    }
}

/// Outcome of extending a graph by one item.
#[derive(Debug, Clone, PartialEq)]
pub enum Extension {
    /// Chains reused from the knowledge base, already scored.
    Cached(Vec<ReasoningChain>),
    /// Freshly generated, unscored chains.
    Generated(Vec<ReasoningChain>),
    /// The backend failed; a degenerate attribute -> item chain stands in.
    Fallback(ReasoningChain),
}

/// Issues sequential chain ids within one graph.
#[derive(Debug, Clone, Default)]
pub struct IdGen {
    prefix: &'static str,
    next: usize,
}

impl IdGen {
    pub fn new(prefix: &'static str) -> Self {
        IdGen { prefix, next: 0 }
    }

    pub fn next_id(&mut self) -> String {
        let id = format!("{}{}", self.prefix, self.next);
        self.next += 1;
        id
    }
}

fn prompt_attributes(item: &Item, user_attributes: &[String]) -> BTreeSet<String> {
    user_attributes
        .iter()
        .chain(&item.attributes)
        .filter_map(|a| canonicalize_label(a).ok())
        .collect()
}

/// Turns a parsed chain into a domain chain anchored on `item`. Item nodes are
/// matched to catalog titles exactly, then by similarity at `theta_sim`;
/// unmatched ones become concepts.
pub fn materialize(
    parsed: &ParsedChain,
    item: &Item,
    graph: &ReasoningGraph,
    id: String,
    theta_sim: f64,
    deps: &Deps,
) -> Result<ReasoningChain> {
    let last = parsed.tokens.len() - 1;
    let mut nodes = Vec::with_capacity(parsed.tokens.len());
    for (i, tok) in parsed.tokens.iter().enumerate() {
        let node = match tok {
            _ if i == last => ChainNode::item(&item.title, item.id.clone())?,
            ChainToken::Item(label) => match deps.titles.get(label) {
                Some(id) => ChainNode::item(label, id.clone())?,
                None => match deps.index.retrieve_top_k(label, 1).into_iter().next() {
                    Some((id, s)) if s >= theta_sim && !deps.index.is_empty() => {
                        let title = &deps.catalog.get(&id).expect("indexed item").title;
                        ChainNode::item(title, id)?
                    }
                    _ => ChainNode::concept(label)?,
                },
            },
            ChainToken::Attr(label) => ChainNode::attribute(label)?,
            ChainToken::Concept(label) | ChainToken::Target(label) => ChainNode::concept(label)?,
            ChainToken::Mask => return Err(Error::invalid("mask token in generated chain")),
        };
        nodes.push(node);
    }
    let mut chain = ReasoningChain::new(id, nodes, item.id.clone(), ChainOrigin::Observed)?;
    chain.relations = parsed.relations.clone();
    chain.parent = parsed.link.clone().filter(|p| graph.chain(p).is_some());
    chain.validate()?;
    Ok(chain)
}

/// Degenerate attribute -> item chain used when the backend gives nothing usable.
pub fn fallback_chain(item: &Item, id: String) -> Result<ReasoningChain> {
    let attr = item.attributes.first().map(String::as_str).unwrap_or("unknown");
    let attr = ChainNode::attribute(attr).or_else(|_| ChainNode::attribute("unknown"))?;
    let mut chain = ReasoningChain::new(id, vec![attr, ChainNode::item(&item.title, item.id.clone())?], item.id.clone(), ChainOrigin::Observed)?;
    chain.score = Some(0);
    chain.fallback = true;
    Ok(chain)
}

fn request_chains(
    item: &Item,
    user_attributes: &[String],
    graph: &ReasoningGraph,
    config: &GraphConfig,
    deps: &Deps,
) -> Result<Vec<ParsedChain>> {
    let existing: Vec<ChainView> = graph.chains().iter().map(ChainView::from_chain).collect();
    let prompt = build_prompt(
        TaskKind::ChainReasoning,
        PayloadFields {
            next_item: Some(ItemView {
                title: canonicalize_label(&item.title)?,
                attributes: item.attributes.iter().filter_map(|a| canonicalize_label(a).ok()).collect(),
            }),
            existing_chains: Some(existing),
            user_attributes: Some(user_attributes.iter().filter_map(|a| canonicalize_label(a).ok()).collect()),
            max_chains: Some(config.chains_per_item),
            ..Default::default()
        },
    )?;
    deps.kbase.record_call(CallKind::Reasoning);
    let raw = deps.client.complete(&prompt)?;
    match parse_chains(&raw.text) {
        Ok(out) => Ok(out.chains),
        Err(Error::NoChains { skipped }) => {
            log::debug!("unparseable reasoning response ({skipped} lines), re-prompting");
            deps.kbase.record_call(CallKind::Reprompt);
            let raw = deps.client.complete(&prompt)?;
            Ok(parse_chains(&raw.text)?.chains)
        }
        Err(e) => Err(e),
    }
}

/// Consults the knowledge base for chains explaining `item`; on a miss asks
/// the model for up to `chains_per_item` new chains given the graph so far.
pub fn extend_graph_with_item(
    graph: &ReasoningGraph,
    item: &Item,
    user_attributes: &[String],
    known_items: &BTreeSet<ItemId>,
    ids: &mut IdGen,
    config: &GraphConfig,
    deps: &Deps,
) -> Result<Extension> {
    let attrs = prompt_attributes(item, user_attributes);
    let cached = deps.kbase.lookup_relevant(&item.id, &attrs, known_items, config.chains_per_item);
    if !cached.is_empty() {
        let chains = cached
            .into_iter()
            .map(|e| {
                let mut c = e.chain;
                c.id = ids.next_id();
                c.parent = None;
                c.origin = ChainOrigin::Cached;
                c.score = Some(e.score);
                c
            })
            .collect();
        return Ok(Extension::Cached(chains));
    }
    let parsed = match request_chains(item, user_attributes, graph, config, deps) {
        Ok(p) => p,
        Err(e @ (Error::BackendExhausted { .. } | Error::BackendRejected { .. })) => {
            log::warn!("backend failed for item {}: {e}", item.id);
            return Err(e);
        }
        Err(e) => {
            log::debug!("no usable chains for item {}: {e}", item.id);
            return Ok(Extension::Fallback(fallback_chain(item, ids.next_id())?));
        }
    };
    let mut seen: BTreeSet<Signature> = graph.chains().iter().map(ReasoningChain::signature).collect();
    let mut out = Vec::new();
    for p in parsed.iter().take(config.chains_per_item) {
        let chain = materialize(p, item, graph, ids.next_id(), config.theta_sim, deps)?;
        if seen.insert(chain.signature()) {
            out.push(chain);
        }
    }
    if out.is_empty() {
        return Ok(Extension::Fallback(fallback_chain(item, ids.next_id())?));
    }
    Ok(Extension::Generated(out))
}

/// Verified chains for one step: `(chain with score, retained)`.
fn score_chains(user: &str, chains: Vec<ReasoningChain>, config: &GraphConfig, deps: &Deps) -> Result<Vec<ReasoningChain>> {
    if !config.verify {
        return Ok(chains.into_iter().map(|c| c.with_score(100)).collect());
    }
    let run = |c: &ReasoningChain| deps.verifier.verify(c, deps.client, Some(deps.kbase));
    let results: Vec<Result<_>> = match deps.pool {
        Some(pool) if chains.len() > 1 => pool.install(|| chains.par_iter().map(run).collect()),
        _ => chains.iter().map(run).collect(),
    };
    let mut out = Vec::with_capacity(chains.len());
    for (chain, v) in chains.into_iter().zip(results) {
        let v = v?;
        let chain = chain.with_score(v.score);
        if !deps.verifier.passes(v.score) {
            deps.verifier.record_rejection(user, &chain, &v)?;
        }
        out.push(chain);
    }
    Ok(out)
}

/// Counters from building one reasoning graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonStats {
    pub generated: usize,
    pub retained: usize,
    pub cached: usize,
    pub fallbacks: usize,
}

impl std::ops::AddAssign for ReasonStats {
    fn add_assign(&mut self, o: Self) {
        self.generated += o.generated;
        self.retained += o.retained;
        self.cached += o.cached;
        self.fallbacks += o.fallbacks;
    }
}

/// Builds the reasoning graph over `events` (already truncated), in order.
pub fn build_reasoning_graph(
    user: &str,
    events: &[ItemId],
    user_attributes: &[String],
    config: &GraphConfig,
    deps: &Deps,
) -> Result<(ReasoningGraph, ReasonStats)> {
    if events.is_empty() {
        return Err(Error::invalid(format!("user {user}: empty input sequence")));
    }
    let mut graph = ReasoningGraph::new();
    let mut ids = IdGen::new("c");
    let mut known = BTreeSet::new();
    let mut stats = ReasonStats::default();
    let mut backend_failures = 0;
    let mut last_backend_error = None;
    for id in events {
        let item = deps
            .catalog
            .get(id)
            .ok_or_else(|| Error::invalid(format!("user {user}: item {id} not in catalog")))?;
        let ext = match extend_graph_with_item(&graph, item, user_attributes, &known, &mut ids, config, deps) {
            Ok(ext) => ext,
            Err(e @ (Error::BackendExhausted { .. } | Error::BackendRejected { .. })) => {
                backend_failures += 1;
                last_backend_error = Some(e);
                Extension::Fallback(fallback_chain(item, ids.next_id())?)
            }
            Err(e) => return Err(e),
        };
        match ext {
            Extension::Cached(chains) => {
                stats.cached += chains.len();
                for c in chains {
                    graph.insert_chain(c)?;
                }
            }
            Extension::Fallback(c) => {
                stats.fallbacks += 1;
                graph.insert_chain(c)?;
            }
            Extension::Generated(chains) => {
                stats.generated += chains.len();
                for c in score_chains(user, chains, config, deps)? {
                    let score = c.score.expect("scored");
                    if u32::from(score) >= config.tau {
                        deps.kbase.insert(c.signature(), &c, score, config.tau)?;
                        stats.retained += 1;
                        graph.insert_chain(c)?;
                    }
                }
            }
        }
        known.insert(id.clone());
    }
    if backend_failures == events.len() {
        if let Some(e) = last_backend_error {
            return Err(e);
        }
    }
    Ok((graph, stats))
}

/// Reasoning and divergent graphs for one input window.
pub fn build_graph_pair(
    user: &str,
    events: &[ItemId],
    user_attributes: &[String],
    config: &GraphConfig,
    deps: &Deps,
) -> Result<(GraphPair, ReasonStats)> {
    if events.is_empty() {
        let empty = GraphPair {
            reasoning: ReasoningGraph::new(),
            divergent: ReasoningGraph::new(),
            last_item: None,
        };
        return Ok((empty, ReasonStats::default()));
    }
    let (reasoning, stats) = build_reasoning_graph(user, events, user_attributes, config, deps)?;
    let divergent = if config.divergent {
        let observed: BTreeSet<ItemId> = events.iter().cloned().collect();
        build_divergent_graph(user, &reasoning, &observed, config, deps)?
    } else {
        ReasoningGraph::new()
    };
    let pair = GraphPair {
        reasoning,
        divergent,
        last_item: events.last().cloned(),
    };
    Ok((pair, stats))
}
