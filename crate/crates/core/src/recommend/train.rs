use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Example, Model, Params};
use crate::config::TrainConfig;
use crate::domain::{Catalog, GraphPair, ItemId, UserGraphs};
use crate::encode::{Anchor, GraphInput};
use crate::error::{Error, Result};
use crate::ingest::LeaveOneOutSplit;

/// Training and test instances derived from a split plus prebuilt graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleSet {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    /// User of each test example, in the same order.
    pub test_users: Vec<String>,
    /// Users skipped because no graphs were built for them.
    pub missing_graphs: usize,
}

fn positions(catalog: &Catalog, ids: &[ItemId]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| catalog.position(id).ok_or_else(|| Error::invalid(format!("unknown item {id}"))))
        .collect()
}

fn example(items: &[ItemId], target: &ItemId, pair: &GraphPair, catalog: &Catalog, buckets: usize) -> Result<Example> {
    let target = positions(catalog, std::slice::from_ref(target))?[0];
    Ok(Example {
        items: positions(catalog, items)?,
        ori: GraphInput::new(&pair.reasoning, catalog, Anchor::Item(pair.last_item.clone()), buckets),
        div: GraphInput::new(&pair.divergent, catalog, Anchor::TopTerminal, buckets),
        target,
    })
}

/// One training example per user (the step before the held-out item, when
/// the prefix allows it) and one test example per user.
pub fn build_examples(
    split: &LeaveOneOutSplit,
    graphs: &BTreeMap<String, UserGraphs>,
    catalog: &Catalog,
    buckets: usize,
) -> Result<ExampleSet> {
    let mut set = ExampleSet {
        train: Vec::new(),
        test: Vec::new(),
        test_users: Vec::new(),
        missing_graphs: 0,
    };
    for entry in &split.entries {
        let Some(g) = graphs.get(&entry.user) else {
            set.missing_graphs += 1;
            continue;
        };
        if let Some(t) = &entry.train_target {
            set.train.push(example(&entry.train_input, t, &g.train, catalog, buckets)?);
        }
        set.test.push(example(&entry.input, &entry.target, &g.test, catalog, buckets)?);
        set.test_users.push(entry.user.clone());
    }
    if set.missing_graphs > 0 {
        log::warn!("{} users have no graphs and were excluded", set.missing_graphs);
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
}

/// Mini-batch SGD on mean cross-entropy. Example order is reshuffled each
/// epoch from `config.seed`; gradients within a batch are summed in a fixed
/// order so results are reproducible.
pub fn train(model: &mut Model, examples: &[Example], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut grad = Params::zeros(&model.config);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = TrainReport {
        loss_history: Vec::with_capacity(config.epochs),
        steps: 0,
    };
    if examples.is_empty() {
        return Ok(report);
    }
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.fill_zero();
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model.loss_and_grad(&examples[i], &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: report.steps,
                    loss: batch_loss,
                });
            }
            total += batch_loss;
            model.params.sgd_step(&grad, config.learning_rate / batch.len() as f64);
            report.steps += 1;
            if !model.params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: report.steps,
                    loss: f64::NAN,
                });
            }
        }
        let mean = total / examples.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        report.loss_history.push(mean);
    }
    Ok(report)
}
