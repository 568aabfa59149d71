//! Run configuration. Every section has defaults; a JSON file may override
//! any subset and command-line flags override the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::BackendConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Verification threshold on the 0..=100 score scale (inclusive).
    pub tau: u32,
    pub chains_per_item: usize,
    /// Candidate extensions requested per retained chain.
    pub k: usize,
    pub theta_sim: f64,
    pub l_tru: usize,
    /// When false, chains skip verification and are scored 100.
    pub verify: bool,
    /// When false, no divergent graph is built.
    pub divergent: bool,
    pub kbase_capacity: usize,
    pub jobs: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            tau: 30,
            chains_per_item: 3,
            k: 3,
            theta_sim: 0.35,
            l_tru: 50,
            verify: true,
            divergent: true,
            kbase_capacity: crate::kbase::DEFAULT_CAPACITY,
            jobs: 1,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau > 101 {
            return Err(Error::invalid(format!("tau {} outside 0..=101", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.theta_sim) {
            return Err(Error::invalid(format!("theta_sim {} outside [0, 1]", self.theta_sim)));
        }
        if self.chains_per_item == 0 || self.l_tru == 0 || self.kbase_capacity == 0 || self.jobs == 0 {
            return Err(Error::invalid(
                "chains_per_item, l_tru, kbase_capacity and jobs must be positive",
            ));
        }
        Ok(())
    }
}

/// Offline oracle settings; the knowledge table is read from a file or
/// derived from the catalog when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub fidelity: f64,
    pub noise_rate: f64,
    pub knowledge: Option<PathBuf>,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            fidelity: 0.9,
            noise_rate: 0.0,
            knowledge: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub d_g: usize,
    pub d_b: usize,
    /// Graph propagation steps.
    pub steps: usize,
    pub l_tru: usize,
    /// Feed-forward hidden width of the attention block.
    pub d_ff: usize,
    /// Standard deviation of the normal initializer.
    pub init_std: f64,
    /// Hash buckets for graph node features.
    pub buckets: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 32,
            seed: 1,
            d_g: 64,
            d_b: 64,
            steps: 2,
            l_tru: 50,
            d_ff: 128,
            init_std: 0.1,
            buckets: crate::encode::DEFAULT_BUCKETS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        let positive = [
            (self.epochs, "epochs"),
            (self.batch_size, "batch_size"),
            (self.d_g, "d_g"),
            (self.d_b, "d_b"),
            (self.steps, "steps"),
            (self.l_tru, "l_tru"),
            (self.d_ff, "d_ff"),
            (self.buckets, "buckets"),
        ];
        for (v, name) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.init_std > 0.0) {
            return Err(Error::invalid("init_std must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub backend: BackendConfig,
    pub oracle: OracleSettings,
    pub graph: GraphConfig,
    pub train: TrainConfig,
    /// Seeds for repeated evaluation runs.
    pub eval_seeds: Vec<u64>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            backend: BackendConfig::default(),
            oracle: OracleSettings::default(),
            graph: GraphConfig::default(),
            train: TrainConfig::default(),
            eval_seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.backend.validate()?;
        self.graph.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.oracle.fidelity) || !(0.0..=1.0).contains(&self.oracle.noise_rate) {
            return Err(Error::invalid("oracle fidelity and noise_rate must lie in [0, 1]"));
        }
        if self.eval_seeds.is_empty() {
            return Err(Error::invalid("eval_seeds must not be empty"));
        }
        Ok(())
    }
}
