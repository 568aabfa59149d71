//! Gated graph encoder: hashed node features, directed propagation through a
//! GRU cell, and an attention readout anchored on one node.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::domain::{Catalog, ChainNode, ItemId, NodeKind, ReasoningGraph};

pub const DEFAULT_BUCKETS: usize = 1 << 14;

/// Row-normalized in/out adjacency over graph nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyPair {
    pub a_in: Array2<f64>,
    pub a_out: Array2<f64>,
}

/// `a_out[i][j] = 1/outdeg(i)` for each distinct edge `i -> j`;
/// `a_in[i][j] = 1/indeg(i)` for each distinct edge `j -> i`.
pub fn build_adjacency(graph: &ReasoningGraph) -> AdjacencyPair {
    let n = graph.nodes().len();
    let pairs: std::collections::BTreeSet<(usize, usize)> = graph.edges().iter().map(|e| (e.src, e.dst)).collect();
    let mut outdeg = vec![0usize; n];
    let mut indeg = vec![0usize; n];
    for &(s, d) in &pairs {
        outdeg[s] += 1;
        indeg[d] += 1;
    }
    let mut a_in = Array2::zeros((n, n));
    let mut a_out = Array2::zeros((n, n));
    for &(s, d) in &pairs {
        a_out[[s, d]] = 1.0 / outdeg[s] as f64;
        a_in[[d, s]] = 1.0 / indeg[d] as f64;
    }
    AdjacencyPair { a_in, a_out }
}

/// Stable bucket for a node identity.
pub fn bucket_of(node: &ChainNode, n_buckets: usize) -> usize {
    let mut h = Sha256::new();
    h.update(node.kind.as_str().as_bytes());
    h.update([0u8]);
    h.update(node.label.as_bytes());
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    (u64::from_le_bytes(b) % n_buckets as u64) as usize
}

/// Which node the readout anchors on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Anchor {
    /// The node of this item; falls back to the last chain's terminal.
    Item(Option<ItemId>),
    /// Terminal of the highest-scored chain. Ties go to the most recent
    /// parent chain, then to the first chain generated from it.
    TopTerminal,
}

/// Everything the encoder needs from a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub adjacency: AdjacencyPair,
    pub buckets: Vec<usize>,
    /// Catalog position for item nodes.
    pub items: Vec<Option<usize>>,
    pub anchor: usize,
}

impl GraphInput {
    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// `None` for an empty graph.
    pub fn new(graph: &ReasoningGraph, catalog: &Catalog, anchor: Anchor, n_buckets: usize) -> Option<Self> {
        if graph.is_empty() {
            return None;
        }
        let nodes = graph.nodes();
        let terminal_index = |i: usize| graph.node_index(&graph.chains()[i].terminal().key());
        let anchor = match anchor {
            Anchor::Item(Some(id)) => nodes
                .iter()
                .position(|n| n.kind == NodeKind::Item && n.item_ref.as_ref() == Some(&id))
                .or_else(|| terminal_index(graph.chains().len() - 1)),
            Anchor::Item(None) => terminal_index(graph.chains().len() - 1),
            Anchor::TopTerminal => {
                // Chains from one parent are contiguous; `group` counts parents.
                let mut best: Option<((u8, usize), usize)> = None;
                let mut group = 0;
                for (i, c) in graph.chains().iter().enumerate() {
                    if i > 0 && graph.chains()[i - 1].parent != c.parent {
                        group += 1;
                    }
                    let key = (c.score.unwrap_or(0), group);
                    if best.is_none_or(|(bk, _)| key > bk) {
                        best = Some((key, i));
                    }
                }
                best.and_then(|(_, i)| terminal_index(i))
            }
        }
        .unwrap_or(0);
        Some(GraphInput {
            adjacency: build_adjacency(graph),
            buckets: nodes.iter().map(|n| bucket_of(n, n_buckets)).collect(),
            items: nodes
                .iter()
                .map(|n| n.item_ref.as_ref().and_then(|id| catalog.position(id)))
                .collect(),
            anchor,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub bucket: Array2<f64>,
    /// Maps item-table rows (d_b) into node space (d_g).
    pub proj: Array2<f64>,
    pub w_in: Array2<f64>,
    pub w_out: Array2<f64>,
    pub b_in: Array2<f64>,
    pub b_out: Array2<f64>,
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_h: Array2<f64>,
    pub att_w1: Array2<f64>,
    pub att_w2: Array2<f64>,
    pub att_c: Array2<f64>,
    pub att_v: Array2<f64>,
    pub w_3: Array2<f64>,
}

pub(crate) fn normal<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn(shape, || dist.sample(rng))
}

/// Normal with standard deviation 1/sqrt(rows), for matrices applied as `x · W`.
pub(crate) fn lecun<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize)) -> Array2<f64> {
    normal(rng, shape, 1.0 / (shape.0 as f64).sqrt())
}

impl EncoderParams {
    pub fn zeros(d_g: usize, d_b: usize, n_buckets: usize) -> Self {
        let z = Array2::zeros;
        EncoderParams {
            bucket: z((n_buckets, d_g)),
            proj: z((d_b, d_g)),
            w_in: z((d_g, d_g)),
            w_out: z((d_g, d_g)),
            b_in: z((1, d_g)),
            b_out: z((1, d_g)),
            w_z: z((2 * d_g, d_g)),
            u_z: z((d_g, d_g)),
            b_z: z((1, d_g)),
            w_r: z((2 * d_g, d_g)),
            u_r: z((d_g, d_g)),
            b_r: z((1, d_g)),
            w_h: z((2 * d_g, d_g)),
            u_h: z((d_g, d_g)),
            b_h: z((1, d_g)),
            att_w1: z((d_g, d_g)),
            att_w2: z((d_g, d_g)),
            att_c: z((1, d_g)),
            att_v: z((1, d_g)),
            w_3: z((2 * d_g, d_g)),
        }
    }

    /// Embedding rows are drawn with `std`; weight matrices with
    /// 1/sqrt(fan-in). The item projection and the anchor half of the readout
    /// projection start at identity, so an untrained encoder passes the
    /// anchor's item embedding through. Biases start at zero.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d_g: usize, d_b: usize, n_buckets: usize, std: f64) -> Self {
        let mut p = Self::zeros(d_g, d_b, n_buckets);
        p.visit_mut(|name, t| match name {
            "bucket" => *t = normal(rng, t.dim(), std),
            "att_v" => *t = normal(rng, t.dim(), 1.0 / (d_g as f64).sqrt()),
            "proj" | "att_c" => {}
            n if n.starts_with("b_") => {}
            _ => *t = lecun(rng, t.dim()),
        });
        for i in 0..d_g.min(d_b) {
            p.proj[[i, i]] = 1.0;
        }
        for i in 0..d_g {
            p.w_3[[i, i]] += 1.0;
        }
        p
    }

    pub fn visit<'a>(&'a self, mut f: impl FnMut(&'static str, &'a Array2<f64>)) {
        f("bucket", &self.bucket);
        f("proj", &self.proj);
        f("w_in", &self.w_in);
        f("w_out", &self.w_out);
        f("b_in", &self.b_in);
        f("b_out", &self.b_out);
        f("w_z", &self.w_z);
        f("u_z", &self.u_z);
        f("b_z", &self.b_z);
        f("w_r", &self.w_r);
        f("u_r", &self.u_r);
        f("b_r", &self.b_r);
        f("w_h", &self.w_h);
        f("u_h", &self.u_h);
        f("b_h", &self.b_h);
        f("att_w1", &self.att_w1);
        f("att_w2", &self.att_w2);
        f("att_c", &self.att_c);
        f("att_v", &self.att_v);
        f("w_3", &self.w_3);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&'static str, &mut Array2<f64>)) {
        f("bucket", &mut self.bucket);
        f("proj", &mut self.proj);
        f("w_in", &mut self.w_in);
        f("w_out", &mut self.w_out);
        f("b_in", &mut self.b_in);
        f("b_out", &mut self.b_out);
        f("w_z", &mut self.w_z);
        f("u_z", &mut self.u_z);
        f("b_z", &mut self.b_z);
        f("w_r", &mut self.w_r);
        f("u_r", &mut self.u_r);
        f("b_r", &mut self.b_r);
        f("w_h", &mut self.w_h);
        f("u_h", &mut self.u_h);
        f("b_h", &mut self.b_h);
        f("att_w1", &mut self.att_w1);
        f("att_w2", &mut self.att_w2);
        f("att_c", &mut self.att_c);
        f("att_v", &mut self.att_v);
        f("w_3", &mut self.w_3);
    }

    pub fn d_g(&self) -> usize {
        self.w_in.nrows()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct StepCache {
    a: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    c: Array2<f64>,
    rh: Array2<f64>,
}

/// Activations kept for the backward pass.
pub struct EncoderCache {
    h: Vec<Array2<f64>>,
    steps: Vec<StepCache>,
    q: Array2<f64>,
    alpha: Array1<f64>,
    x: Array1<f64>,
}

fn add_row(m: &mut Array2<f64>, b: &Array2<f64>) {
    *m += &b.row(0);
}

/// Graph embedding of dimension d_g.
pub fn forward(
    g: &GraphInput,
    p: &EncoderParams,
    item_table: &Array2<f64>,
    steps: usize,
) -> (Array1<f64>, EncoderCache) {
    let d = p.d_g();
    let n = g.len();
    let mut h0 = Array2::zeros((n, d));
    for i in 0..n {
        let mut row = h0.row_mut(i);
        row += &p.bucket.row(g.buckets[i]);
        if let Some(v) = g.items[i] {
            row += &item_table.row(v).dot(&p.proj);
        }
    }
    let mut hs = vec![h0];
    let mut caches = Vec::with_capacity(steps);
    for _ in 0..steps {
        let h = hs.last().expect("non-empty");
        let mut m_in = g.adjacency.a_in.dot(&h.dot(&p.w_in));
        add_row(&mut m_in, &p.b_in);
        let mut m_out = g.adjacency.a_out.dot(&h.dot(&p.w_out));
        add_row(&mut m_out, &p.b_out);
        let a = ndarray::concatenate(Axis(1), &[m_in.view(), m_out.view()]).expect("same rows");
        let mut gz = a.dot(&p.w_z) + h.dot(&p.u_z);
        add_row(&mut gz, &p.b_z);
        let z = gz.mapv(sigmoid);
        let mut gr = a.dot(&p.w_r) + h.dot(&p.u_r);
        add_row(&mut gr, &p.b_r);
        let r = gr.mapv(sigmoid);
        let rh = &r * h;
        let mut gc = a.dot(&p.w_h) + rh.dot(&p.u_h);
        add_row(&mut gc, &p.b_h);
        let c = gc.mapv(f64::tanh);
        let next = h + &(&z * &(&c - h));
        caches.push(StepCache { a, z, r, c, rh });
        hs.push(next);
    }
    let h = hs.last().expect("non-empty");
    let ha = h.row(g.anchor).to_owned();
    let mut u = h.dot(&p.att_w2);
    u += &ha.dot(&p.att_w1);
    add_row(&mut u, &p.att_c);
    let q = u.mapv(sigmoid);
    let alpha = q.dot(&p.att_v.row(0));
    let s = h.t().dot(&alpha);
    let x = ndarray::concatenate(Axis(0), &[ha.view(), s.view()]).expect("vectors");
    let out = x.dot(&p.w_3);
    (
        out,
        EncoderCache {
            h: hs,
            steps: caches,
            q,
            alpha,
            x,
        },
    )
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

fn add_colsum(dst: &mut Array2<f64>, m: &Array2<f64>) {
    let mut row = dst.row_mut(0);
    row += &m.sum_axis(Axis(0));
}

/// Accumulates parameter gradients for upstream gradient `d_out` into
/// `grad`, and item-table gradients into `d_items`.
pub fn backward(
    g: &GraphInput,
    p: &EncoderParams,
    item_table: &Array2<f64>,
    cache: &EncoderCache,
    d_out: ArrayView1<f64>,
    grad: &mut EncoderParams,
    d_items: &mut Array2<f64>,
) {
    let d = p.d_g();
    let h = cache.h.last().expect("non-empty");
    grad.w_3 += &outer(cache.x.view(), d_out);
    let dx = p.w_3.dot(&d_out);
    let mut dha = dx.slice(s![..d]).to_owned();
    let ds = dx.slice(s![d..]).to_owned();

    let mut dh = Array2::zeros(h.dim());
    // s = H^T alpha
    let dalpha = h.dot(&ds);
    dh += &outer(cache.alpha.view(), ds.view());
    // alpha = q v
    let v = p.att_v.row(0);
    {
        let mut gv = grad.att_v.row_mut(0);
        gv += &cache.q.t().dot(&dalpha);
    }
    let dq = outer(dalpha.view(), v);
    let du = &dq * &cache.q.mapv(|x| x * (1.0 - x));
    let du_sum = du.sum_axis(Axis(0));
    add_colsum(&mut grad.att_c, &du);
    grad.att_w2 += &h.t().dot(&du);
    dh += &du.dot(&p.att_w2.t());
    let ha = h.row(g.anchor);
    grad.att_w1 += &outer(ha, du_sum.view());
    dha += &p.att_w1.dot(&du_sum);
    {
        let mut row = dh.row_mut(g.anchor);
        row += &dha;
    }

    for (t, sc) in cache.steps.iter().enumerate().rev() {
        let h_prev = &cache.h[t];
        let dz = &dh * &(&sc.c - h_prev);
        let dc = &dh * &sc.z;
        let mut dh_prev = &dh * &sc.z.mapv(|z| 1.0 - z);

        let dgc = &dc * &sc.c.mapv(|c| 1.0 - c * c);
        grad.w_h += &sc.a.t().dot(&dgc);
        add_colsum(&mut grad.b_h, &dgc);
        grad.u_h += &sc.rh.t().dot(&dgc);
        let mut da = dgc.dot(&p.w_h.t());
        let drh = dgc.dot(&p.u_h.t());
        let dr = &drh * h_prev;
        dh_prev += &(&drh * &sc.r);

        let dgr = &dr * &sc.r.mapv(|r| r * (1.0 - r));
        grad.w_r += &sc.a.t().dot(&dgr);
        grad.u_r += &h_prev.t().dot(&dgr);
        add_colsum(&mut grad.b_r, &dgr);
        da += &dgr.dot(&p.w_r.t());
        dh_prev += &dgr.dot(&p.u_r.t());

        let dgz = &dz * &sc.z.mapv(|z| z * (1.0 - z));
        grad.w_z += &sc.a.t().dot(&dgz);
        grad.u_z += &h_prev.t().dot(&dgz);
        add_colsum(&mut grad.b_z, &dgz);
        da += &dgz.dot(&p.w_z.t());
        dh_prev += &dgz.dot(&p.u_z.t());

        let dm_in = da.slice(s![.., ..d]).to_owned();
        let dm_out = da.slice(s![.., d..]).to_owned();
        add_colsum(&mut grad.b_in, &dm_in);
        add_colsum(&mut grad.b_out, &dm_out);
        let dp_in = g.adjacency.a_in.t().dot(&dm_in);
        let dp_out = g.adjacency.a_out.t().dot(&dm_out);
        grad.w_in += &h_prev.t().dot(&dp_in);
        grad.w_out += &h_prev.t().dot(&dp_out);
        dh_prev += &dp_in.dot(&p.w_in.t());
        dh_prev += &dp_out.dot(&p.w_out.t());
        dh = dh_prev;
    }

    for i in 0..g.len() {
        let dhi = dh.row(i);
        let mut brow = grad.bucket.row_mut(g.buckets[i]);
        brow += &dhi;
        if let Some(v) = g.items[i] {
            grad.proj += &outer(item_table.row(v), dhi);
            let mut irow = d_items.row_mut(v);
            irow += &p.proj.dot(&dhi);
        }
    }
}

/// Rows of the bucket table touched by a set of graphs.
pub fn used_buckets<'a>(graphs: impl IntoIterator<Item = &'a GraphInput>) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for g in graphs {
        for &b in &g.buckets {
            *out.entry(b).or_insert(0) += 1;
        }
    }
    out
}
