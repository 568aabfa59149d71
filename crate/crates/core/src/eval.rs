//! Leave-one-out metrics and the multi-seed experiment runner.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::Result;
use crate::recommend::{rank_of, train, Example, ExampleSet, Model, ModelConfig, Variant};

/// 1 when the 1-based `rank` is within the top `n`.
pub fn hr_at_n(rank: usize, n: usize) -> f64 {
    assert!(rank >= 1, "ranks are 1-based");
    if rank <= n {
        1.0
    } else {
        0.0
    }
}

/// Single relevant item, so the ideal DCG is 1.
pub fn ndcg_at_n(rank: usize, n: usize) -> f64 {
    assert!(rank >= 1, "ranks are 1-based");
    if rank <= n {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

impl Metrics {
    /// Means over users. An empty slice gives all zeros.
    pub fn from_ranks(ranks: &[usize]) -> Self {
        if ranks.is_empty() {
            return Metrics::default();
        }
        let n = ranks.len() as f64;
        let mean = |f: &dyn Fn(usize) -> f64| ranks.iter().map(|&r| f(r)).sum::<f64>() / n;
        Metrics {
            hr5: mean(&|r| hr_at_n(r, 5)),
            hr10: mean(&|r| hr_at_n(r, 10)),
            ndcg5: mean(&|r| ndcg_at_n(r, 5)),
            ndcg10: mean(&|r| ndcg_at_n(r, 10)),
        }
    }

    fn values(&self) -> [f64; 4] {
        [self.hr5, self.hr10, self.ndcg5, self.ndcg10]
    }

    fn from_values(v: [f64; 4]) -> Self {
        Metrics {
            hr5: v[0],
            hr10: v[1],
            ndcg5: v[2],
            ndcg10: v[3],
        }
    }
}

/// Rank of each example's target under the model, in example order.
pub fn rank_targets(model: &Model, examples: &[Example], pool: Option<&rayon::ThreadPool>) -> Vec<usize> {
    let rank = |ex: &Example| rank_of(&model.scores(ex), ex.target);
    match pool {
        Some(pool) => pool.install(|| examples.par_iter().map(rank).collect()),
        None => examples.iter().map(rank).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: Metrics,
    pub users: usize,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub seeds: Vec<SeedResult>,
    pub mean: Metrics,
    /// Sample standard deviation across seeds (zero for a single seed).
    pub std: Metrics,
    /// Users left out because their graphs were missing.
    pub excluded_users: usize,
}

const COLUMNS: [&str; 4] = ["HR@5", "HR@10", "NDCG@5", "NDCG@10"];

impl MetricsReport {
    pub fn from_seeds(variant: Variant, seeds: Vec<SeedResult>, excluded_users: usize) -> Self {
        let k = seeds.len().max(1) as f64;
        let mut mean = [0.0; 4];
        for s in &seeds {
            for (m, v) in mean.iter_mut().zip(s.metrics.values()) {
                *m += v / k;
            }
        }
        let mut var = [0.0; 4];
        if seeds.len() > 1 {
            for s in &seeds {
                for ((acc, v), m) in var.iter_mut().zip(s.metrics.values()).zip(mean) {
                    *acc += (v - m).powi(2) / (k - 1.0);
                }
            }
        }
        MetricsReport {
            variant,
            seeds,
            mean: Metrics::from_values(mean),
            std: Metrics::from_values(var.map(f64::sqrt)),
            excluded_users,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned table with one row per report, mean ± std per metric.
    pub fn table(reports: &[&MetricsReport]) -> String {
        let mut out = format!("{:<16}", "model");
        for c in COLUMNS {
            let _ = write!(out, " {c:>17}");
        }
        out.push('\n');
        for r in reports {
            let _ = write!(out, "{:<16}", r.variant.as_str());
            for (m, s) in r.mean.values().iter().zip(r.std.values()) {
                let _ = write!(out, " {:>17}", format!("{m:.4} ± {s:.4}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,users,hr5,hr10,ndcg5,ndcg10\n");
        for s in &self.seeds {
            let m = s.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                self.variant.as_str(),
                s.seed,
                s.users,
                m.hr5,
                m.hr10,
                m.ndcg5,
                m.ndcg10
            );
        }
        out
    }
}

/// Trains a fresh model per seed on `examples.train` and scores `examples.test`.
pub fn evaluate(
    examples: &ExampleSet,
    n_items: usize,
    train_config: &TrainConfig,
    variant: Variant,
    seeds: &[u64],
    pool: Option<&rayon::ThreadPool>,
) -> Result<MetricsReport> {
    let mut results = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            ..train_config.clone()
        };
        let mut model = Model::new(ModelConfig::from_train(&cfg, n_items, variant), seed, cfg.init_std)?;
        let report = train(&mut model, &examples.train, &cfg)?;
        let ranks = rank_targets(&model, &examples.test, pool);
        log::info!("{} seed {seed}: {} users evaluated", variant.as_str(), ranks.len());
        results.push(SeedResult {
            seed,
            metrics: Metrics::from_ranks(&ranks),
            users: ranks.len(),
            final_loss: report.loss_history.last().copied(),
        });
    }
    Ok(MetricsReport::from_seeds(variant, results, examples.missing_graphs))
}
