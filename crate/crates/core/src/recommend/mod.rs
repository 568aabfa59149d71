//! Base sequential model, fusion head and next-item scoring.

mod base;
mod checkpoint;
mod train;

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use base::{base_backward, base_forward, gelu, gelu_grad, BaseCache, BaseParams};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, DataSources};
pub use train::{build_examples, train, ExampleSet, TrainReport};

use crate::config::TrainConfig;
use crate::domain::EmbeddingBundle;
use crate::encode::{self, lecun, normal, EncoderCache, EncoderParams, GraphInput};
use crate::error::{Error, Result};

/// Which parts of the model are active. Ablations switch graph inputs off;
/// an inactive graph contributes a zero embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoDivergent,
    /// Same architecture as `Full`; the difference lies in how graphs were built.
    NoVerification,
    BaseOnly,
}

impl Variant {
    pub fn uses_reasoning(self) -> bool {
        !matches!(self, Variant::BaseOnly)
    }

    pub fn uses_divergent(self) -> bool {
        matches!(self, Variant::Full | Variant::NoVerification)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDivergent => "no_divergent",
            Variant::NoVerification => "no_verification",
            Variant::BaseOnly => "base_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_items: usize,
    pub d_g: usize,
    pub d_b: usize,
    pub d_ff: usize,
    pub steps: usize,
    pub l_tru: usize,
    pub buckets: usize,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn from_train(train: &TrainConfig, n_items: usize, variant: Variant) -> Self {
        ModelConfig {
            n_items,
            d_g: train.d_g,
            d_b: train.d_b,
            d_ff: train.d_ff,
            steps: train.steps,
            l_tru: train.l_tru,
            buckets: train.buckets,
            variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub item: Array2<f64>,
    pub base: BaseParams,
    /// Maps `[e_ori; e_div; e_base]` (2 d_g + d_b) to d_b.
    pub fusion: Array2<f64>,
    pub ori: EncoderParams,
    pub div: EncoderParams,
}

impl Params {
    pub fn zeros(c: &ModelConfig) -> Self {
        Params {
            item: Array2::zeros((c.n_items, c.d_b)),
            base: BaseParams::zeros(c.d_b, c.d_ff, c.l_tru),
            fusion: Array2::zeros((2 * c.d_g + c.d_b, c.d_b)),
            ori: EncoderParams::zeros(c.d_g, c.d_b, c.buckets),
            div: EncoderParams::zeros(c.d_g, c.d_b, c.buckets),
        }
    }

    /// Embedding tables are drawn with `std`. The fusion matrix starts as
    /// noise plus identity on each input block (where shapes allow), so the
    /// initial fused embedding is close to the sum of its three inputs.
    pub fn random(c: &ModelConfig, seed: u64, std: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fusion = lecun(&mut rng, (2 * c.d_g + c.d_b, c.d_b));
        for block in [0, c.d_g, 2 * c.d_g] {
            let width = if block == 2 * c.d_g { c.d_b } else { c.d_g };
            for i in 0..width.min(c.d_b) {
                fusion[[block + i, i]] += 1.0;
            }
        }
        Params {
            item: normal(&mut rng, (c.n_items, c.d_b), std),
            base: BaseParams::random(&mut rng, c.d_b, c.d_ff, c.l_tru, std),
            fusion,
            ori: EncoderParams::random(&mut rng, c.d_g, c.d_b, c.buckets, std),
            div: EncoderParams::random(&mut rng, c.d_g, c.d_b, c.buckets, std),
        }
    }

    /// Every tensor with a stable dotted name.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(&str, &'a Array2<f64>)) {
        f("item", &self.item);
        f("fusion", &self.fusion);
        self.base.visit(|n, t| f(&format!("base.{n}"), t));
        self.ori.visit(|n, t| f(&format!("ori.{n}"), t));
        self.div.visit(|n, t| f(&format!("div.{n}"), t));
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Array2<f64>)) {
        f("item", &mut self.item);
        f("fusion", &mut self.fusion);
        self.base.visit_mut(|n, t| f(&format!("base.{n}"), t));
        self.ori.visit_mut(|n, t| f(&format!("ori.{n}"), t));
        self.div.visit_mut(|n, t| f(&format!("div.{n}"), t));
    }

    /// Applies `self -= lr * grad`, tensor by tensor.
    pub fn sgd_step(&mut self, grad: &Params, lr: f64) {
        let mut grads = Vec::new();
        grad.visit(|_, t| grads.push(t));
        let mut grads = grads.into_iter();
        self.visit_mut(|_, t| t.scaled_add(-lr, grads.next().expect("same layout")));
    }

    pub fn fill_zero(&mut self) {
        self.visit_mut(|_, t| t.fill(0.0));
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, t| ok &= t.iter().all(|x| x.is_finite()));
        ok
    }
}

/// One prediction instance: base-model input, optional graphs, target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub items: Vec<usize>,
    pub ori: Option<GraphInput>,
    pub div: Option<GraphInput>,
    pub target: usize,
}

/// `item_table · (W_f^T-style projection of the concatenation)`.
pub fn fuse_and_score(
    e_ori: &Array1<f64>,
    e_div: &Array1<f64>,
    e_base: &Array1<f64>,
    fusion: &Array2<f64>,
    item_table: &Array2<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let x = ndarray::concatenate(Axis(0), &[e_ori.view(), e_div.view(), e_base.view()]).expect("vectors");
    let e_f = x.dot(fusion);
    let scores = item_table.dot(&e_f);
    (e_f, scores)
}

pub fn softmax(scores: &Array1<f64>) -> Array1<f64> {
    let m = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = scores.mapv(|s| (s - m).exp());
    let z = e.sum();
    e / z
}

fn log_sum_exp(scores: &Array1<f64>) -> f64 {
    let m = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + scores.mapv(|s| (s - m).exp()).sum().ln()
}

/// Top `n` catalog positions by score; equal scores keep ascending position
/// (the catalog is sorted by id, so this is ascending id).
pub fn top_n(scores: &Array1<f64>, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// 1-based rank of `target` under the same ordering as [`top_n`].
pub fn rank_of(scores: &Array1<f64>, target: usize) -> usize {
    let st = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > st || (s == st && i < target))
        .count()
}

struct ForwardCache {
    ori: Option<(EncoderCache, Array1<f64>)>,
    div: Option<(EncoderCache, Array1<f64>)>,
    base: BaseCache,
    bundle: EmbeddingBundle,
    x: Array1<f64>,
    e_f: Array1<f64>,
    scores: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64, init_std: f64) -> Result<Self> {
        if config.n_items == 0 {
            return Err(Error::invalid("model needs a non-empty catalog"));
        }
        let params = Params::random(&config, seed, init_std);
        Ok(Model { config, params })
    }

    fn encode(&self, g: Option<&GraphInput>, p: &EncoderParams, active: bool) -> Option<(EncoderCache, Array1<f64>)> {
        let g = g.filter(|_| active)?;
        let (out, cache) = encode::forward(g, p, &self.params.item, self.config.steps);
        Some((cache, out))
    }

    fn forward(&self, ex: &Example) -> ForwardCache {
        let v = self.config.variant;
        let ori = self.encode(ex.ori.as_ref(), &self.params.ori, v.uses_reasoning());
        let div = self.encode(ex.div.as_ref(), &self.params.div, v.uses_divergent());
        let zero = Array1::zeros(self.config.d_g);
        let e_ori = ori.as_ref().map(|(_, o)| o.clone()).unwrap_or_else(|| zero.clone());
        let e_div = div.as_ref().map(|(_, o)| o.clone()).unwrap_or(zero);
        let start = ex.items.len().saturating_sub(self.config.l_tru);
        let (e_base, base) = base_forward(&ex.items[start..], &self.params.item, &self.params.base);
        let x = ndarray::concatenate(Axis(0), &[e_ori.view(), e_div.view(), e_base.view()]).expect("vectors");
        let (e_f, scores) = fuse_and_score(&e_ori, &e_div, &e_base, &self.params.fusion, &self.params.item);
        ForwardCache {
            ori,
            div,
            base,
            bundle: EmbeddingBundle {
                e_ori: e_ori.to_vec(),
                e_div: e_div.to_vec(),
                e_base: e_base.to_vec(),
                e_fusion: e_f.to_vec(),
            },
            x,
            e_f,
            scores,
        }
    }

    pub fn embeddings(&self, ex: &Example) -> EmbeddingBundle {
        self.forward(ex).bundle
    }

    pub fn scores(&self, ex: &Example) -> Array1<f64> {
        self.forward(ex).scores
    }

    pub fn loss(&self, ex: &Example) -> f64 {
        let s = self.scores(ex);
        log_sum_exp(&s) - s[ex.target]
    }

    /// Cross-entropy of one example; adds its gradient into `grad`.
    pub fn loss_and_grad(&self, ex: &Example, grad: &mut Params) -> f64 {
        let c = self.forward(ex);
        let loss = log_sum_exp(&c.scores) - c.scores[ex.target];
        let mut ds = softmax(&c.scores);
        ds[ex.target] -= 1.0;
        let p = &self.params;
        grad.item += &ds.view().insert_axis(Axis(1)).dot(&c.e_f.view().insert_axis(Axis(0)));
        let de_f = p.item.t().dot(&ds);
        grad.fusion += &c.x.view().insert_axis(Axis(1)).dot(&de_f.view().insert_axis(Axis(0)));
        let dx = p.fusion.dot(&de_f);
        let d_g = self.config.d_g;
        let d_ori = dx.slice(s![..d_g]);
        let d_div = dx.slice(s![d_g..2 * d_g]);
        let d_base = dx.slice(s![2 * d_g..]).to_owned();
        base_backward(&d_base, &p.item, &p.base, &c.base, &mut grad.base, &mut grad.item);
        if let (Some((cache, _)), Some(g)) = (&c.ori, &ex.ori) {
            encode::backward(g, &p.ori, &p.item, cache, d_ori, &mut grad.ori, &mut grad.item);
        }
        if let (Some((cache, _)), Some(g)) = (&c.div, &ex.div) {
            encode::backward(g, &p.div, &p.item, cache, d_div, &mut grad.div, &mut grad.item);
        }
        loss
    }

    pub fn predict_top_n(&self, ex: &Example, n: usize) -> Vec<usize> {
        top_n(&self.scores(ex), n)
    }
}
