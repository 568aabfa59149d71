//! Shared data model: catalog, interaction sequences, reasoning chains and graphs.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Opaque catalog identifier. Ordering is lexicographic and is the tie-break
/// order used across ranking.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub String);

impl ItemId {
    pub fn new(id: impl Into<String>) -> Self {
        ItemId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ItemId {
    fn from(s: &str) -> Self {
        ItemId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub title: String,
    pub attributes: Vec<String>,
}

impl Item {
    /// Builds an item, trimming the title and deduplicating attributes while
    /// keeping their first-seen order.
    pub fn new(id: ItemId, title: &str, attributes: impl IntoIterator<Item = String>) -> Result<Self> {
        let title = title.trim();
        if title.is_empty() {
            return Err(Error::invalid(format!("item {id} has an empty title")));
        }
        let mut seen = BTreeSet::new();
        let attributes = attributes
            .into_iter()
            .map(|a| a.trim().to_string())
            .filter(|a| !a.is_empty() && seen.insert(a.clone()))
            .collect();
        Ok(Item {
            id,
            title: title.to_string(),
            attributes,
        })
    }
}

/// The item universe. Items are kept sorted by id so positions follow id order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct Catalog {
    items: Vec<Item>,
    index: HashMap<ItemId, usize>,
}

#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    items: Vec<Item>,
}

impl TryFrom<CatalogRepr> for Catalog {
    type Error = Error;

    fn try_from(repr: CatalogRepr) -> Result<Self> {
        Catalog::new(repr.items)
    }
}

impl From<Catalog> for CatalogRepr {
    fn from(c: Catalog) -> Self {
        CatalogRepr { items: c.items }
    }
}

impl PartialEq for Catalog {
    fn eq(&self, other: &Self) -> bool {
        self.items == other.items
    }
}

impl Catalog {
    pub fn new(mut items: Vec<Item>) -> Result<Self> {
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = HashMap::with_capacity(items.len());
        for (pos, item) in items.iter().enumerate() {
            if index.insert(item.id.clone(), pos).is_some() {
                return Err(Error::invalid(format!("duplicate item id {}", item.id)));
            }
        }
        Ok(Catalog { items, index })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn position(&self, id: &ItemId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &ItemId) -> Option<&Item> {
        self.position(id).map(|p| &self.items[p])
    }

    pub fn item_at(&self, pos: usize) -> &Item {
        &self.items[pos]
    }

    pub fn contains(&self, id: &ItemId) -> bool {
        self.index.contains_key(id)
    }
}

/// A user's deduplicated, chronologically ordered events. The relative time
/// index of `events[i]` is `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub user_id: String,
    pub events: Vec<ItemId>,
    #[serde(default)]
    pub attributes: Vec<String>,
}

impl InteractionSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Checks the post-ingest invariants against a catalog.
    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        let mut seen = BTreeSet::new();
        for item in &self.events {
            if !seen.insert(item) {
                return Err(Error::invalid(format!(
                    "user {} has duplicate event {item}",
                    self.user_id
                )));
            }
            if !catalog.contains(item) {
                return Err(Error::invalid(format!(
                    "user {} references unknown item {item}",
                    self.user_id
                )));
            }
        }
        Ok(())
    }
}

/// Lowercases, collapses internal whitespace and strips punctuation from both
/// ends. Brackets stay when their partner is inside the label.
pub fn canonicalize_label(text: &str) -> Result<String> {
    let collapsed = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let chars: Vec<char> = collapsed.chars().collect();
    let (mut lo, mut hi) = (0, chars.len());
    loop {
        let before = (lo, hi);
        while lo < hi && strippable(chars[lo], &chars[lo..hi], true) {
            lo += 1;
        }
        while hi > lo && strippable(chars[hi - 1], &chars[lo..hi], false) {
            hi -= 1;
        }
        if (lo, hi) == before {
            break;
        }
    }
    let label: String = chars[lo..hi].iter().collect::<String>().trim().to_string();
    if label.is_empty() {
        return Err(Error::EmptyLabel(text.to_string()));
    }
    Ok(label)
}

fn strippable(c: char, window: &[char], leading: bool) -> bool {
    if c.is_whitespace() {
        return true;
    }
    if !(c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace())) {
        return false;
    }
    let partner = match (c, leading) {
        ('(', true) => Some(')'),
        ('[', true) => Some(']'),
        ('{', true) => Some('}'),
        (')', false) => Some('('),
        (']', false) => Some('['),
        ('}', false) => Some('{'),
        _ => None,
    };
    match partner {
        Some(p) => !window.contains(&p),
        None => true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Item,
    Attribute,
    Concept,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Item => "item",
            NodeKind::Attribute => "attribute",
            NodeKind::Concept => "concept",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainNode {
    pub kind: NodeKind,
    pub label: String,
    #[serde(default)]
    pub item_ref: Option<ItemId>,
}

impl ChainNode {
    pub fn item(title: &str, id: ItemId) -> Result<Self> {
        Ok(ChainNode {
            kind: NodeKind::Item,
            label: canonicalize_label(title)?,
            item_ref: Some(id),
        })
    }

    pub fn attribute(label: &str) -> Result<Self> {
        Ok(ChainNode {
            kind: NodeKind::Attribute,
            label: canonicalize_label(label)?,
            item_ref: None,
        })
    }

    pub fn concept(label: &str) -> Result<Self> {
        Ok(ChainNode {
            kind: NodeKind::Concept,
            label: canonicalize_label(label)?,
            item_ref: None,
        })
    }

    pub fn key(&self) -> NodeKey {
        NodeKey(self.kind, self.label.clone())
    }

    pub fn is_maskable(&self) -> bool {
        matches!(self.kind, NodeKind::Item | NodeKind::Attribute)
    }

    fn validate(&self) -> Result<()> {
        if self.label.is_empty() || canonicalize_label(&self.label)? != self.label {
            return Err(Error::invalid(format!("node label {:?} is not canonical", self.label)));
        }
        if (self.kind == NodeKind::Item) != self.item_ref.is_some() {
            return Err(Error::invalid(format!(
                "node {:?}: item_ref must be present iff kind is item",
                self.label
            )));
        }
        Ok(())
    }
}

/// Node identity within a graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeKey(pub NodeKind, pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainOrigin {
    Observed,
    Divergent,
    Cached,
}

pub const DEFAULT_RELATION: &str = "leads to";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub id: String,
    pub nodes: Vec<ChainNode>,
    /// Relation text for each consecutive pair; `relations.len() == nodes.len() - 1`.
    pub relations: Vec<String>,
    pub target_item: ItemId,
    pub score: Option<u8>,
    pub origin: ChainOrigin,
    /// Id of the existing chain this one extends, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Degenerate attribute -> item chain emitted when the backend fails.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

impl ReasoningChain {
    pub fn new(
        id: impl Into<String>,
        nodes: Vec<ChainNode>,
        target_item: ItemId,
        origin: ChainOrigin,
    ) -> Result<Self> {
        let relations = vec![DEFAULT_RELATION.to_string(); nodes.len().saturating_sub(1)];
        let chain = ReasoningChain {
            id: id.into(),
            nodes,
            relations,
            target_item,
            score: None,
            origin,
            parent: None,
            fallback: false,
        };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.len() < 2 {
            return Err(Error::invalid(format!("chain {} has fewer than 2 nodes", self.id)));
        }
        if self.relations.len() != self.nodes.len() - 1 {
            return Err(Error::invalid(format!("chain {} has mismatched relations", self.id)));
        }
        for node in &self.nodes {
            node.validate()?;
        }
        if self.origin == ChainOrigin::Observed {
            let last = self.terminal();
            if last.kind != NodeKind::Item || last.item_ref.as_ref() != Some(&self.target_item) {
                return Err(Error::invalid(format!(
                    "observed chain {} must end at its target item",
                    self.id
                )));
            }
        }
        if let Some(score) = self.score {
            if score > 100 {
                return Err(Error::invalid(format!("chain {} score {score} > 100", self.id)));
            }
        }
        Ok(())
    }

    pub fn terminal(&self) -> &ChainNode {
        self.nodes.last().expect("chain has at least two nodes")
    }

    pub fn signature(&self) -> Signature {
        chain_signature(self)
    }

    pub fn with_score(mut self, score: u8) -> Self {
        self.score = Some(score.min(100));
        self
    }
}

/// 128-bit chain digest, hex encoded on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature(pub [u8; 16]);

impl Signature {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 32 || !s.is_ascii() {
            return Err(Error::invalid(format!("bad signature {s:?}")));
        }
        let mut out = [0u8; 16];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::invalid(format!("bad signature {s:?}")))?;
        }
        Ok(Signature(out))
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Signature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Signature::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Digest over the sorted non-terminal node identities plus the target item.
pub fn chain_signature(chain: &ReasoningChain) -> Signature {
    let mut keys: Vec<String> = chain.nodes[..chain.nodes.len() - 1]
        .iter()
        .map(|n| format!("{}:{}", n.kind.as_str(), n.label))
        .collect();
    keys.sort();
    let mut hasher = Sha256::new();
    for key in &keys {
        hasher.update((key.len() as u64).to_le_bytes());
        hasher.update(key.as_bytes());
    }
    hasher.update(b"\x00target\x00");
    hasher.update(chain.target_item.as_str().as_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    Signature(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: String,
    pub chains: Vec<String>,
}

/// Union of retained chains. Nodes merge on (kind, label); edges on
/// (src, dst, relation). Used for both the reasoning and divergent graphs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct ReasoningGraph {
    nodes: Vec<ChainNode>,
    edges: Vec<Edge>,
    chains: Vec<ReasoningChain>,
    node_index: HashMap<NodeKey, usize>,
    edge_index: HashMap<(usize, usize, String), usize>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    nodes: Vec<ChainNode>,
    edges: Vec<Edge>,
    chains: Vec<ReasoningChain>,
}

impl TryFrom<GraphRepr> for ReasoningGraph {
    type Error = Error;

    fn try_from(repr: GraphRepr) -> Result<Self> {
        let mut graph = ReasoningGraph::default();
        for chain in repr.chains {
            graph.insert_chain(chain)?;
        }
        if graph.nodes != repr.nodes || graph.edges != repr.edges {
            return Err(Error::invalid(
                "graph nodes/edges are not the union of its chains",
            ));
        }
        Ok(graph)
    }
}

impl From<ReasoningGraph> for GraphRepr {
    fn from(g: ReasoningGraph) -> Self {
        GraphRepr {
            nodes: g.nodes,
            edges: g.edges,
            chains: g.chains,
        }
    }
}

impl PartialEq for ReasoningGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges && self.chains == other.chains
    }
}

/// Same shape as the reasoning graph; terminals are grounded, unobserved items.
pub type DivergentGraph = ReasoningGraph;

impl ReasoningGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_chains(chains: impl IntoIterator<Item = ReasoningChain>) -> Result<Self> {
        let mut g = Self::new();
        for c in chains {
            g.insert_chain(c)?;
        }
        Ok(g)
    }

    pub fn nodes(&self) -> &[ChainNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn chains(&self) -> &[ReasoningChain] {
        &self.chains
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, key: &NodeKey) -> Option<usize> {
        self.node_index.get(key).copied()
    }

    pub fn chain(&self, id: &str) -> Option<&ReasoningChain> {
        self.chains.iter().find(|c| c.id == id)
    }

    /// Merges a scored chain. Chain ids must be unique within the graph.
    pub fn insert_chain(&mut self, chain: ReasoningChain) -> Result<()> {
        chain.validate()?;
        if chain.score.is_none() {
            return Err(Error::invalid(format!("chain {} is unscored", chain.id)));
        }
        if self.chain(&chain.id).is_some() {
            return Err(Error::invalid(format!("duplicate chain id {}", chain.id)));
        }
        let idx: Vec<usize> = chain.nodes.iter().map(|n| self.intern(n)).collect();
        for (w, relation) in idx.windows(2).zip(&chain.relations) {
            let key = (w[0], w[1], relation.clone());
            match self.edge_index.get(&key) {
                Some(&e) => {
                    if !self.edges[e].chains.contains(&chain.id) {
                        self.edges[e].chains.push(chain.id.clone());
                    }
                }
                None => {
                    self.edge_index.insert(key, self.edges.len());
                    self.edges.push(Edge {
                        src: w[0],
                        dst: w[1],
                        relation: relation.clone(),
                        chains: vec![chain.id.clone()],
                    });
                }
            }
        }
        self.chains.push(chain);
        Ok(())
    }

    fn intern(&mut self, node: &ChainNode) -> usize {
        let key = node.key();
        if let Some(&i) = self.node_index.get(&key) {
            return i;
        }
        let i = self.nodes.len();
        self.nodes.push(node.clone());
        self.node_index.insert(key, i);
        i
    }

    /// Item ids of chain terminals, in chain order, deduplicated.
    pub fn terminal_items(&self) -> Vec<ItemId> {
        let mut seen = BTreeSet::new();
        self.chains
            .iter()
            .filter_map(|c| c.terminal().item_ref.clone())
            .filter(|id| seen.insert(id.clone()))
            .collect()
    }
}

/// Graphs built for one user and one input window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphPair {
    pub reasoning: ReasoningGraph,
    pub divergent: DivergentGraph,
    /// Item the reasoning-graph readout anchors on (last observed item).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_item: Option<ItemId>,
}

/// Per-user graph file: the training view (input ends before the training
/// target) and the test view (input ends before the held-out item).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGraphs {
    pub user: String,
    pub train: GraphPair,
    pub test: GraphPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBundle {
    pub e_ori: Vec<f64>,
    pub e_div: Vec<f64>,
    pub e_base: Vec<f64>,
    pub e_fusion: Vec<f64>,
}

impl EmbeddingBundle {
    pub fn validate(&self, d_g: usize, d_b: usize) -> Result<()> {
        let dims = [
            (self.e_ori.len(), d_g, "e_ori"),
            (self.e_div.len(), d_g, "e_div"),
            (self.e_base.len(), d_b, "e_base"),
            (self.e_fusion.len(), d_b, "e_fusion"),
        ];
        for (got, want, name) in dims {
            if got != want {
                return Err(Error::invalid(format!("{name} has dim {got}, expected {want}")));
            }
        }
        let all = self.e_ori.iter().chain(&self.e_div).chain(&self.e_base).chain(&self.e_fusion);
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("embedding bundle has non-finite entries"));
        }
        Ok(())
    }
}
