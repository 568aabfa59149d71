//! Divergent extension: imagined next items for retained chains, grounded to
//! the catalog and verified like observed chains.

use std::collections::BTreeSet;

use crate::config::GraphConfig;
use crate::domain::{ChainNode, ChainOrigin, DivergentGraph, ItemId, ReasoningChain, ReasoningGraph};
use crate::error::Result;
use crate::ground::CatalogIndex;
use crate::kbase::CallKind;
use crate::llm::{build_prompt, parse_items, ChainView, LlmClient, PayloadFields, TaskKind};
use crate::reason::{Deps, IdGen};

/// Up to `k` distinct candidate next-item texts for `chain`. Unusable
/// responses yield an empty list.
pub fn extend_chain(chain: &ReasoningChain, client: &LlmClient, k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let prompt = build_prompt(
        TaskKind::DivergentExtension,
        PayloadFields {
            chain: Some(ChainView::from_chain(chain)),
            k: Some(k),
            ..Default::default()
        },
    )?;
    let raw = client.complete(&prompt)?;
    let mut items = parse_items(&raw.text);
    items.truncate(k);
    Ok(items)
}

/// Maps each candidate to its most similar catalog item, keeping it when the
/// similarity reaches `theta_sim` and the item is unobserved. Deduplicated,
/// in candidate order.
pub fn ground_candidates(
    candidates: &[String],
    index: &CatalogIndex,
    observed: &BTreeSet<ItemId>,
    theta_sim: f64,
) -> Vec<(ItemId, f64)> {
    if index.is_empty() {
        return Vec::new();
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for c in candidates {
        let Some((id, sim)) = index.retrieve_top_k(c, 1).into_iter().next() else {
            continue;
        };
        if sim >= theta_sim && !observed.contains(&id) && seen.insert(id.clone()) {
            out.push((id, sim));
        }
    }
    out
}

/// Extends every retained, non-fallback chain of `reasoning`, grounds the
/// candidates, verifies the extended chains with the same threshold and
/// merges the survivors.
pub fn build_divergent_graph(
    user: &str,
    reasoning: &ReasoningGraph,
    observed: &BTreeSet<ItemId>,
    config: &GraphConfig,
    deps: &Deps,
) -> Result<DivergentGraph> {
    let mut graph = DivergentGraph::new();
    let mut ids = IdGen::new("d");
    let sources = reasoning
        .chains()
        .iter()
        .filter(|c| !c.fallback && c.score.is_some_and(|s| u32::from(s) >= config.tau));
    for chain in sources {
        deps.kbase.record_call(CallKind::Extension);
        let candidates = match extend_chain(chain, deps.client, config.k) {
            Ok(c) => c,
            Err(e) => {
                log::debug!("extension failed for chain {}: {e}", chain.id);
                continue;
            }
        };
        for (item_id, _) in ground_candidates(&candidates, deps.index, observed, config.theta_sim) {
            let item = deps.catalog.get(&item_id).expect("grounded item is in the catalog");
            let mut nodes = chain.nodes.clone();
            nodes.push(ChainNode::item(&item.title, item_id.clone())?);
            let mut ext = ReasoningChain::new(ids.next_id(), nodes, item_id, ChainOrigin::Divergent)?;
            ext.parent = Some(chain.id.clone());
            let score = if config.verify {
                let v = deps.verifier.verify(&ext, deps.client, Some(deps.kbase))?;
                if !deps.verifier.passes(v.score) {
                    deps.verifier.record_rejection(user, &ext.clone().with_score(v.score), &v)?;
                }
                v.score
            } else {
                100
            };
            if u32::from(score) >= config.tau {
                graph.insert_chain(ext.with_score(score))?;
            }
        }
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Catalog, Item};
    use crate::ground::{similarity, IdfTable};

    fn catalog(n: usize) -> Catalog {
        let words = ["red", "blue", "green", "night", "star", "river", "storm", "glass", "iron", "silver"];
        let items = (0..n)
            .map(|i| {
                let title = format!("{} {} {}", words[i % 10], words[(i / 10) % 10], i);
                Item::new(ItemId::new(format!("i{i:03}")), &title, vec![]).unwrap()
            })
            .collect();
        Catalog::new(items).unwrap()
    }

    #[test]
    fn exact_title_grounds_with_similarity_one() {
        let cat = catalog(20);
        let index = CatalogIndex::from_catalog(&cat);
        let title = cat.items()[3].title.clone();
        let got = ground_candidates(&[title], &index, &BTreeSet::new(), 0.35);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, cat.items()[3].id);
        assert!((got[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn below_threshold_and_observed_are_dropped() {
        let cat = catalog(20);
        let index = CatalogIndex::from_catalog(&cat);
        assert!(ground_candidates(&["qqqq zzzz".into()], &index, &BTreeSet::new(), 0.35).is_empty());
        let title = cat.items()[5].title.clone();
        let observed: BTreeSet<ItemId> = [cat.items()[5].id.clone()].into();
        assert!(ground_candidates(&[title], &index, &observed, 0.0).is_empty());
    }

    #[test]
    fn grounding_matches_exhaustive_scan() {
        let cat = catalog(50);
        let idf = IdfTable::from_catalog(&cat);
        let index = CatalogIndex::new(&cat, idf.clone());
        let scorer = crate::ground::LexicalScorer::new(idf);
        let candidates: Vec<String> = ["red star", "blue river 12", "iron storm", "glass night 40", "silver"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let got = ground_candidates(&candidates, &index, &BTreeSet::new(), 0.0);
        let mut expected = Vec::new();
        let mut seen = BTreeSet::new();
        for c in &candidates {
            let q = scorer.embed(c);
            let mut best: Option<(ItemId, f64)> = None;
            for item in cat.items() {
                let s = similarity(&q, &scorer.embed(&item.title));
                let better = match &best {
                    None => true,
                    Some((bid, bs)) => s > *bs || (s == *bs && item.id < *bid),
                };
                if better {
                    best = Some((item.id.clone(), s));
                }
            }
            let (id, s) = best.unwrap();
            if seen.insert(id.clone()) {
                expected.push((id, s));
            }
        }
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!(g.0, e.0);
            assert!((g.1 - e.1).abs() < 1e-12);
        }
    }
}
