//! Central finite-difference check of the full model's analytic gradients.

use std::collections::BTreeSet;

use llmrg::recommend::{Model, ModelConfig, Params, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::toy::{random_examples, toy_catalog};

const H: f64 = 1e-5;

/// Relative error of 1e-4, with an absolute floor for entries whose true
/// gradient is numerically zero.
pub fn close(a: f64, n: f64) -> bool {
    let diff = (a - n).abs();
    diff <= 1e-4 * a.abs().max(n.abs()) || diff <= 1e-8
}

/// 5 users over 20 items with small dimensions.
pub fn toy_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        n_items: 20,
        d_g: 3,
        d_b: 4,
        d_ff: 5,
        steps: 2,
        l_tru: 6,
        buckets: 8,
        variant,
    }
}

pub struct SeedCheck {
    pub checked: usize,
    pub failures: Vec<String>,
    /// Parameter groups that saw at least one clearly nonzero gradient.
    pub live: BTreeSet<String>,
}

pub fn check_seed(seed: u64, variant: Variant) -> SeedCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let catalog = toy_catalog(20);
    let examples = random_examples(&mut rng, &catalog, 5, 6, 8);
    let mut model = Model::new(toy_config(variant), seed, 0.5).unwrap();
    model.params.visit_mut(|_, t| t.mapv_inplace(|x| x + rng.random_range(-0.3..0.3)));

    let mut grad = Params::zeros(&model.config);
    for ex in &examples {
        model.loss_and_grad(ex, &mut grad);
    }
    let total = |m: &Model| examples.iter().map(|ex| m.loss(ex)).sum::<f64>();

    let mut analytic = Vec::new();
    grad.visit(|name, t| analytic.push((name.to_string(), t.clone())));
    let mut out = SeedCheck {
        checked: 0,
        failures: Vec::new(),
        live: BTreeSet::new(),
    };
    for (name, g) in &analytic {
        for idx in 0..g.len() {
            let (r, c) = (idx / g.ncols(), idx % g.ncols());
            let shifted = |delta: f64| {
                let mut m = model.clone();
                m.params.visit_mut(|n, t| {
                    if n == name {
                        t[[r, c]] += delta;
                    }
                });
                total(&m)
            };
            let numeric = (shifted(H) - shifted(-H)) / (2.0 * H);
            let a = g[[r, c]];
            out.checked += 1;
            if numeric.abs() > 1e-4 {
                out.live.insert(name.split('.').next().unwrap().to_string());
            }
            if !close(a, numeric) {
                out.failures.push(format!("seed {seed} {name}[{r},{c}]: analytic {a:e} numeric {numeric:e}"));
            }
        }
    }
    out
}
