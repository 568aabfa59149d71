//! Single-block causal self-attention over item and position embeddings.
//! Only the final position feeds the output, so only its query is formed.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::encode::{lecun, normal};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BaseParams {
    /// Row `k` is the embedding for the event `k` steps before the last.
    pub pos: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub ff_w1: Array2<f64>,
    pub ff_b1: Array2<f64>,
    pub ff_w2: Array2<f64>,
    pub ff_b2: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
}

impl BaseParams {
    pub fn zeros(d: usize, d_ff: usize, l_tru: usize) -> Self {
        let z = Array2::zeros;
        BaseParams {
            pos: z((l_tru, d)),
            wq: z((d, d)),
            wk: z((d, d)),
            wv: z((d, d)),
            wo: z((d, d)),
            ln1_g: z((1, d)),
            ln1_b: z((1, d)),
            ff_w1: z((d, d_ff)),
            ff_b1: z((1, d_ff)),
            ff_w2: z((d_ff, d)),
            ff_b2: z((1, d)),
            ln2_g: z((1, d)),
            ln2_b: z((1, d)),
        }
    }

    /// Positional rows drawn with `std`, weight matrices with 1/sqrt(fan-in),
    /// unit layer-norm gains, zero biases.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, d_ff: usize, l_tru: usize, std: f64) -> Self {
        let mut p = Self::zeros(d, d_ff, l_tru);
        p.visit_mut(|name, t| match name {
            "pos" => *t = normal(rng, t.dim(), std),
            "ln1_g" | "ln2_g" => t.fill(1.0),
            "ln1_b" | "ln2_b" | "ff_b1" | "ff_b2" => {}
            _ => *t = lecun(rng, t.dim()),
        });
        p
    }

    pub fn visit<'a>(&'a self, mut f: impl FnMut(&'static str, &'a Array2<f64>)) {
        f("pos", &self.pos);
        f("wq", &self.wq);
        f("wk", &self.wk);
        f("wv", &self.wv);
        f("wo", &self.wo);
        f("ln1_g", &self.ln1_g);
        f("ln1_b", &self.ln1_b);
        f("ff_w1", &self.ff_w1);
        f("ff_b1", &self.ff_b1);
        f("ff_w2", &self.ff_w2);
        f("ff_b2", &self.ff_b2);
        f("ln2_g", &self.ln2_g);
        f("ln2_b", &self.ln2_b);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&'static str, &mut Array2<f64>)) {
        f("pos", &mut self.pos);
        f("wq", &mut self.wq);
        f("wk", &mut self.wk);
        f("wv", &mut self.wv);
        f("wo", &mut self.wo);
        f("ln1_g", &mut self.ln1_g);
        f("ln1_b", &mut self.ln1_b);
        f("ff_w1", &mut self.ff_w1);
        f("ff_b1", &mut self.ff_b1);
        f("ff_w2", &mut self.ff_w2);
        f("ff_b2", &mut self.ff_b2);
        f("ln2_g", &mut self.ln2_g);
        f("ln2_b", &mut self.ln2_b);
    }

    pub fn l_tru(&self) -> usize {
        self.pos.nrows()
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) struct LayerNormCache {
    xhat: Array1<f64>,
    inv_std: f64,
}

pub(crate) fn layer_norm(x: &Array1<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array1<f64>, LayerNormCache) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let centered = x - mean;
    let var = centered.mapv(|v| v * v).sum() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let xhat = centered * inv_std;
    let y = &xhat * &g + &b;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns dx; accumulates dg and db.
pub(crate) fn layer_norm_backward(
    dy: &Array1<f64>,
    g: ArrayView1<f64>,
    cache: &LayerNormCache,
    dg: &mut Array2<f64>,
    db: &mut Array2<f64>,
) -> Array1<f64> {
    {
        let mut r = dg.row_mut(0);
        r += &(dy * &cache.xhat);
    }
    {
        let mut r = db.row_mut(0);
        r += dy;
    }
    let dxhat = dy * &g;
    let n = dy.len() as f64;
    let m1 = dxhat.sum() / n;
    let m2 = (&dxhat * &cache.xhat).sum() / n;
    (dxhat - m1 - &cache.xhat * m2) * cache.inv_std
}

pub struct BaseCache {
    items: Vec<usize>,
    x: Array2<f64>,
    q: Array1<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    p: Array1<f64>,
    o: Array1<f64>,
    ln1: LayerNormCache,
    h1: Array1<f64>,
    f1: Array1<f64>,
    a1: Array1<f64>,
    ln2: LayerNormCache,
}

/// Embedding of the sequence at its final position. `items` are catalog
/// positions, oldest first, at most `l_tru` long.
pub fn base_forward(items: &[usize], item_table: &Array2<f64>, p: &BaseParams) -> (Array1<f64>, BaseCache) {
    assert!(!items.is_empty() && items.len() <= p.l_tru(), "input length must be in 1..=l_tru");
    let l = items.len();
    let d = item_table.ncols();
    let mut x = Array2::zeros((l, d));
    for (i, &it) in items.iter().enumerate() {
        let mut row = x.row_mut(i);
        row += &item_table.row(it);
        row += &p.pos.row(l - 1 - i);
    }
    let last = x.row(l - 1).to_owned();
    let q = last.dot(&p.wq);
    let k = x.dot(&p.wk);
    let v = x.dot(&p.wv);
    let scale = 1.0 / (d as f64).sqrt();
    let scores = k.dot(&q) * scale;
    let max = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = scores.mapv(|s| (s - max).exp());
    let probs = &e / e.sum();
    let o = v.t().dot(&probs);
    let att = o.dot(&p.wo);
    let r1 = &last + &att;
    let (h1, ln1) = layer_norm(&r1, p.ln1_g.row(0), p.ln1_b.row(0));
    let f1 = h1.dot(&p.ff_w1) + &p.ff_b1.row(0);
    let a1 = f1.mapv(gelu);
    let f2 = a1.dot(&p.ff_w2) + &p.ff_b2.row(0);
    let r2 = &h1 + &f2;
    let (h2, ln2) = layer_norm(&r2, p.ln2_g.row(0), p.ln2_b.row(0));
    (
        h2,
        BaseCache {
            items: items.to_vec(),
            x,
            q,
            k,
            v,
            p: probs,
            o,
            ln1,
            h1,
            f1,
            a1,
            ln2,
        },
    )
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    a.insert_axis(Axis(1)).dot(&b.insert_axis(Axis(0)))
}

pub fn base_backward(
    de: &Array1<f64>,
    item_table: &Array2<f64>,
    p: &BaseParams,
    c: &BaseCache,
    grad: &mut BaseParams,
    d_items: &mut Array2<f64>,
) {
    let l = c.items.len();
    let d = item_table.ncols();
    let dr2 = layer_norm_backward(de, p.ln2_g.row(0), &c.ln2, &mut grad.ln2_g, &mut grad.ln2_b);
    let mut dh1 = dr2.clone();
    grad.ff_w2 += &outer(c.a1.view(), dr2.view());
    {
        let mut r = grad.ff_b2.row_mut(0);
        r += &dr2;
    }
    let da1 = p.ff_w2.dot(&dr2);
    let df1 = &da1 * &c.f1.mapv(gelu_grad);
    grad.ff_w1 += &outer(c.h1.view(), df1.view());
    {
        let mut r = grad.ff_b1.row_mut(0);
        r += &df1;
    }
    dh1 += &p.ff_w1.dot(&df1);
    let dr1 = layer_norm_backward(&dh1, p.ln1_g.row(0), &c.ln1, &mut grad.ln1_g, &mut grad.ln1_b);
    let mut dlast = dr1.clone();
    grad.wo += &outer(c.o.view(), dr1.view());
    let do_ = p.wo.dot(&dr1);
    let dp = c.v.dot(&do_);
    let dv = outer(c.p.view(), do_.view());
    let dot = c.p.dot(&dp);
    let dscores = &c.p * &(dp - dot);
    let scale = 1.0 / (d as f64).sqrt();
    let dk = outer(dscores.view(), c.q.view()) * scale;
    let dq = c.k.t().dot(&dscores) * scale;
    let last = c.x.row(l - 1);
    grad.wq += &outer(last, dq.view());
    dlast += &p.wq.dot(&dq);
    grad.wk += &c.x.t().dot(&dk);
    grad.wv += &c.x.t().dot(&dv);
    let mut dx = dk.dot(&p.wk.t()) + dv.dot(&p.wv.t());
    {
        let mut r = dx.row_mut(l - 1);
        r += &dlast;
    }
    for (i, &it) in c.items.iter().enumerate() {
        let mut r = d_items.row_mut(it);
        r += &dx.row(i);
        let mut r = grad.pos.row_mut(l - 1 - i);
        r += &dx.row(i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Full causal block over every position, written out loop by loop.
    fn reference(items: &[usize], table: &Array2<f64>, p: &BaseParams) -> Vec<f64> {
        let l = items.len();
        let d = table.ncols();
        let x: Vec<Vec<f64>> = (0..l)
            .map(|i| (0..d).map(|j| table[[items[i], j]] + p.pos[[l - 1 - i, j]]).collect())
            .collect();
        let mv = |v: &[f64], m: &Array2<f64>| -> Vec<f64> {
            (0..m.ncols()).map(|j| (0..v.len()).map(|k| v[k] * m[[k, j]]).sum()).collect()
        };
        let ln = |v: &[f64], g: &Array2<f64>, b: &Array2<f64>| -> Vec<f64> {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            v.iter()
                .enumerate()
                .map(|(j, a)| (a - mean) / (var + LN_EPS).sqrt() * g[[0, j]] + b[[0, j]])
                .collect()
        };
        let mut out = Vec::new();
        for t in 0..l {
            let q = mv(&x[t], &p.wq);
            let ks: Vec<Vec<f64>> = (0..=t).map(|i| mv(&x[i], &p.wk)).collect();
            let vs: Vec<Vec<f64>> = (0..=t).map(|i| mv(&x[i], &p.wv)).collect();
            let sc: Vec<f64> = ks
                .iter()
                .map(|k| k.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = sc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = sc.iter().map(|s| (s - m).exp()).sum();
            let w: Vec<f64> = sc.iter().map(|s| (s - m).exp() / z).collect();
            let o: Vec<f64> = (0..d).map(|j| (0..=t).map(|i| w[i] * vs[i][j]).sum()).collect();
            let att = mv(&o, &p.wo);
            let r1: Vec<f64> = (0..d).map(|j| x[t][j] + att[j]).collect();
            let h1 = ln(&r1, &p.ln1_g, &p.ln1_b);
            let f1: Vec<f64> = mv(&h1, &p.ff_w1).iter().enumerate().map(|(j, v)| gelu(v + p.ff_b1[[0, j]])).collect();
            let f2: Vec<f64> = mv(&f1, &p.ff_w2).iter().enumerate().map(|(j, v)| v + p.ff_b2[[0, j]]).collect();
            let r2: Vec<f64> = (0..d).map(|j| h1[j] + f2[j]).collect();
            out = ln(&r2, &p.ln2_g, &p.ln2_b);
        }
        out
    }

    fn setup(seed: u64) -> (Array2<f64>, BaseParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = BaseParams::random(&mut rng, 6, 10, 8, 0.4);
        p.ln1_b = normal(&mut rng, (1, 6), 0.1);
        p.ff_b1 = normal(&mut rng, (1, 10), 0.1);
        (normal(&mut rng, (12, 6), 0.5), p)
    }

    #[test]
    fn matches_reference_block() {
        for seed in 0..5 {
            let (table, p) = setup(seed);
            let items = [3usize, 7, 1, 11, 0];
            let (e, _) = base_forward(&items, &table, &p);
            let r = reference(&items, &table, &p);
            for (a, b) in e.iter().zip(&r) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_event_depends_only_on_that_item() {
        let (table, p) = setup(9);
        let (a, _) = base_forward(&[4], &table, &p);
        let (b, _) = base_forward(&[4], &table, &p);
        assert_eq!(a, b);
        let (c, _) = base_forward(&[5], &table, &p);
        assert_ne!(a, c);
    }

    #[test]
    fn position_sensitive() {
        let (table, p) = setup(10);
        let (a, _) = base_forward(&[1, 2, 3], &table, &p);
        let (b, _) = base_forward(&[2, 1, 3], &table, &p);
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
