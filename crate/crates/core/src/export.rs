//! Graph rendering for inspection.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::domain::{GraphPair, NodeKey, NodeKind, ReasoningGraph};
use crate::error::Result;

fn shape(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Item => "box",
        NodeKind::Attribute => "ellipse",
        NodeKind::Concept => "diamond",
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

/// One DOT digraph for both graphs. Nodes with the same identity are drawn
/// once; edges only present in the divergent graph are red and dashed.
pub fn to_dot(name: &str, pair: &GraphPair) -> String {
    let mut ids: HashMap<NodeKey, usize> = HashMap::new();
    let mut out = format!("digraph {} {{\n  rankdir=LR;\n", quote(name));
    let mut add_nodes = |g: &ReasoningGraph, out: &mut String| {
        for n in g.nodes() {
            let next = ids.len();
            let id = *ids.entry(n.key()).or_insert(next);
            if id == next {
                let _ = writeln!(out, "  n{id} [label={}, shape={}];", quote(&n.label), shape(n.kind));
            }
        }
    };
    add_nodes(&pair.reasoning, &mut out);
    add_nodes(&pair.divergent, &mut out);

    let key = |g: &ReasoningGraph, i: usize| ids[&g.nodes()[i].key()];
    let mut drawn = BTreeSet::new();
    for e in pair.reasoning.edges() {
        let (s, d) = (key(&pair.reasoning, e.src), key(&pair.reasoning, e.dst));
        drawn.insert((s, d, e.relation.clone()));
        let _ = writeln!(out, "  n{s} -> n{d} [label={}];", quote(&e.relation));
    }
    for e in pair.divergent.edges() {
        let (s, d) = (key(&pair.divergent, e.src), key(&pair.divergent, e.dst));
        if drawn.insert((s, d, e.relation.clone())) {
            let _ = writeln!(
                out,
                "  n{s} -> n{d} [label={}, color=red, fontcolor=red, style=dashed];",
                quote(&e.relation)
            );
        }
    }
    out.push_str("}\n");
    out
}

pub fn to_json(pair: &GraphPair) -> Result<String> {
    Ok(serde_json::to_string_pretty(pair)? + "\n")
}
