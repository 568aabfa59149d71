//! Character 3-gram TF-IDF vectors, cosine similarity and exact top-k catalog
//! retrieval.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{canonicalize_label, Catalog, ItemId};

const PAD_START: char = '^';
const PAD_END: char = '$';

/// Padded character 3-grams of `text`, in order of occurrence.
pub fn char_trigrams(text: &str) -> Vec<String> {
    if text.is_empty() {
        return Vec::new();
    }
    let padded: Vec<char> = std::iter::once(PAD_START)
        .chain(text.chars())
        .chain(std::iter::once(PAD_END))
        .collect();
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

/// Document frequencies over a title corpus. `uniform()` weighs every gram 1,
/// which turns vectors into plain count vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    n_docs: usize,
    df: BTreeMap<String, usize>,
    #[serde(default)]
    uniform: bool,
}

impl IdfTable {
    pub fn uniform() -> Self {
        IdfTable {
            n_docs: 0,
            df: BTreeMap::new(),
            uniform: true,
        }
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df = BTreeMap::new();
        let mut n_docs = 0;
        for text in texts {
            n_docs += 1;
            let grams: BTreeSet<String> = char_trigrams(text).into_iter().collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        IdfTable {
            n_docs,
            df,
            uniform: false,
        }
    }

    /// Builds the table over canonicalized catalog titles.
    pub fn from_catalog(catalog: &Catalog) -> Self {
        let titles: Vec<String> = catalog.items().iter().map(|i| canonical_or_empty(&i.title)).collect();
        Self::from_texts(titles.iter().map(String::as_str))
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn df(&self, gram: &str) -> usize {
        self.df.get(gram).copied().unwrap_or(0)
    }

    /// `ln(1 + N / df)`; grams absent from the corpus count as `df = 1`.
    pub fn idf(&self, gram: &str) -> f64 {
        if self.uniform {
            return 1.0;
        }
        let df = self.df(gram).max(1) as f64;
        (1.0 + self.n_docs as f64 / df).ln()
    }
}

fn canonical_or_empty(text: &str) -> String {
    canonicalize_label(text).unwrap_or_default()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector(pub BTreeMap<String, f64>);

impl SparseVector {
    pub fn is_zero(&self) -> bool {
        self.0.values().all(|&w| w == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (small, large) = if self.0.len() <= other.0.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .0
            .iter()
            .filter_map(|(g, w)| large.0.get(g).map(|v| w * v))
            .sum()
    }
}

/// tf * idf over padded 3-grams. Empty text yields the zero vector.
pub fn embed_text(text: &str, idf: &IdfTable) -> SparseVector {
    let mut tf: BTreeMap<String, f64> = BTreeMap::new();
    for g in char_trigrams(text) {
        *tf.entry(g).or_insert(0.0) += 1.0;
    }
    let weights = tf
        .into_iter()
        .map(|(g, count)| {
            let w = count * idf.idf(&g);
            (g, w)
        })
        .collect();
    SparseVector(weights)
}

/// Cosine similarity clamped to [0, 1]; any zero vector scores 0.
pub fn similarity(a: &SparseVector, b: &SparseVector) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(0.0, 1.0)
}

/// Text similarity used by verification scoring and divergent grounding.
pub trait Grounder: Send + Sync {
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// Deterministic lexical scorer over a fixed IDF table.
#[derive(Debug, Clone)]
pub struct LexicalScorer {
    idf: IdfTable,
}

impl LexicalScorer {
    pub fn new(idf: IdfTable) -> Self {
        LexicalScorer { idf }
    }

    /// Plain count-vector cosine.
    pub fn counts() -> Self {
        LexicalScorer {
            idf: IdfTable::uniform(),
        }
    }

    pub fn idf(&self) -> &IdfTable {
        &self.idf
    }

    pub fn embed(&self, text: &str) -> SparseVector {
        embed_text(text, &self.idf)
    }
}

impl Grounder for LexicalScorer {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        similarity(&self.embed(a), &self.embed(b))
    }
}

/// Catalog title vectors plus an inverted gram index used only to find
/// candidates; scores come from [`similarity`] so results equal a full scan.
#[derive(Debug, Clone)]
pub struct CatalogIndex {
    scorer: LexicalScorer,
    ids: Vec<ItemId>,
    titles: Vec<SparseVector>,
    postings: BTreeMap<String, Vec<usize>>,
}

impl CatalogIndex {
    pub fn new(catalog: &Catalog, idf: IdfTable) -> Self {
        let scorer = LexicalScorer::new(idf);
        let mut postings: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut titles = Vec::with_capacity(catalog.len());
        let mut ids = Vec::with_capacity(catalog.len());
        for (pos, item) in catalog.items().iter().enumerate() {
            let v = scorer.embed(&canonical_or_empty(&item.title));
            for g in v.0.keys() {
                postings.entry(g.clone()).or_default().push(pos);
            }
            titles.push(v);
            ids.push(item.id.clone());
        }
        CatalogIndex {
            scorer,
            ids,
            titles,
            postings,
        }
    }

    pub fn from_catalog(catalog: &Catalog) -> Self {
        Self::new(catalog, IdfTable::from_catalog(catalog))
    }

    pub fn scorer(&self) -> &LexicalScorer {
        &self.scorer
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Exact top-k by similarity, ties broken by ascending item id.
    pub fn retrieve_top_k(&self, text: &str, k: usize) -> Vec<(ItemId, f64)> {
        let k = k.max(1).min(self.ids.len());
        let query = self.scorer.embed(&canonical_or_empty(text));
        let mut scores = vec![0.0; self.ids.len()];
        let mut touched = BTreeSet::new();
        for g in query.0.keys() {
            if let Some(list) = self.postings.get(g) {
                touched.extend(list.iter().copied());
            }
        }
        for pos in touched {
            scores[pos] = similarity(&query, &self.titles[pos]);
        }
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        });
        order
            .into_iter()
            .take(k)
            .map(|p| (self.ids[p].clone(), scores[p]))
            .collect()
    }
}
