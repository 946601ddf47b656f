//! The training loop: per iteration, sample a minibatch, re-select the real
//! edge set, run forward/backward, step the parameters, then apply the edge
//! update rule. Wiring policies vary the last two steps for the baselines.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{
    evaluate, sgd_step_params, update_edges, update_real_edges_only, Model,
};
use crate::error::{Error, Result};
use crate::graph::dead_nodes;
use crate::numerics::Rng;
use crate::params::Mode;
use crate::store::{select_edges, EdgeSet};

/// Optimization settings shared by every method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Cosine-annealed learning rate; defaults to a constant rate.
    #[serde(default)]
    pub cosine_schedule: bool,
    /// Bare update rule: momentum and weight decay forced to zero.
    #[serde(default)]
    pub plain: bool,
    /// Weight decay on the io-map weights.
    #[serde(default = "default_true")]
    pub decay_io: bool,
    /// Learning rate for the retraining phase of one-shot pruning.
    #[serde(default)]
    pub finetune_learning_rate: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            cosine_schedule: false,
            plain: false,
            decay_io: true,
            finetune_learning_rate: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", "must be in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("train.weight_decay", "must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        Ok(())
    }

    /// (momentum, weight_decay) after the plain flag.
    pub fn effective_momentum_decay(&self) -> (f64, f64) {
        if self.plain {
            (0.0, 0.0)
        } else {
            (self.momentum, self.weight_decay)
        }
    }

    /// Learning rate for a 0-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.cosine_schedule && self.epochs > 0 {
            let t = epoch as f64 / self.epochs as f64;
            self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        } else {
            self.learning_rate
        }
    }
}

/// One row of the training log. `wall_ms` is telemetry and is excluded from
/// serialized metrics so identical configs produce byte-identical files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub active_edges: usize,
    pub live_nodes: usize,
    pub method: String,
    pub seed: u64,
    #[serde(skip_serializing, default)]
    pub wall_ms: u64,
}

/// A finished run: final model, its initialization snapshot (one-shot
/// pruning restarts from it), and the per-epoch log.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub initial: Model,
    pub iterations: u64,
    pub metrics: Vec<MetricsRecord>,
}

/// How the real edge set is chosen and which weights the update rule may
/// touch.
#[derive(Debug, Clone)]
pub(crate) enum WiringPolicy {
    /// Re-select top-k each iteration; update every candidate pair.
    Learned,
    /// Re-select top-k each iteration; update only the current real edges.
    LearnedRealOnly,
    /// Fixed edge set; update only its members.
    Frozen(Vec<usize>),
    /// Start complete, prune smallest-|w| survivors down to k on a linear
    /// per-epoch schedule, with an L1 term on survivors.
    Anneal { surviving: Vec<bool>, lambda_l1: f64 },
}

/// Algorithm entry point: learned wiring with updates to all candidates.
pub fn train(model: Model, data: &Dataset, config: &TrainConfig, method: &str) -> Result<TrainedModel> {
    run_training(model, data, config, method, WiringPolicy::Learned)
}

/// Deterministic minibatch plan for one epoch: seeded shuffle, then
/// contiguous chunks (the trailing partial batch is kept).
pub(crate) fn epoch_batches(rng: &mut Rng, train_indices: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order = train_indices.to_vec();
    rng.shuffle(&mut order);
    order
        .chunks(batch_size)
        .map(|chunk| chunk.to_vec())
        .collect()
}

pub(crate) fn run_training(
    mut model: Model,
    data: &Dataset,
    config: &TrainConfig,
    method: &str,
    mut policy: WiringPolicy,
) -> Result<TrainedModel> {
    config.validate()?;
    if data.train_indices.is_empty() {
        return Err(Error::contract("dataset has no training samples"));
    }
    let started = Instant::now();
    let initial = model.clone();
    let num_nodes = model.topology.num_nodes();
    let (momentum, weight_decay) = config.effective_momentum_decay();
    let mut rng = Rng::new(config.seed);
    let mut iterations = 0u64;
    let mut metrics = Vec::with_capacity(config.epochs + 1);

    let record = |model: &Model,
                  policy: &WiringPolicy,
                  epoch: usize,
                  train_loss: Option<f64>,
                  started: &Instant|
     -> Result<MetricsRecord> {
        let edges = current_edges(model, policy);
        let (train_features, train_labels) = data.train_batch();
        let (eval_loss, train_acc) = evaluate(model, &edges, &train_features, &train_labels)?;
        let test_acc = if data.test_indices.is_empty() {
            0.0
        } else {
            let (test_features, test_labels) = data.test_batch();
            evaluate(model, &edges, &test_features, &test_labels)?.1
        };
        let dead = dead_nodes(&model.topology, &edges.pairs(&model.store));
        Ok(MetricsRecord {
            epoch,
            train_loss: train_loss.unwrap_or(eval_loss),
            train_acc,
            test_acc,
            active_edges: edges.len(),
            live_nodes: model.topology.num_nodes() - dead.len(),
            method: method.to_string(),
            seed: config.seed,
            wall_ms: started.elapsed().as_millis() as u64,
        })
    };

    metrics.push(record(&model, &policy, 0, None, &started)?);

    for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch - 1);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch_indices in epoch_batches(&mut rng, &data.train_indices, config.batch_size) {
            let (features, labels) = data.batch(&batch_indices);
            let edges = current_edges(&model, &policy);
            let mut state = model
                .forward(&edges, &features, Mode::Train)
                .map_err(|e| annotate_iteration(e, iterations))?;
            let grads = model
                .backward(&edges, &mut state, &labels)
                .map_err(|e| annotate_iteration(e, iterations))?;
            loss_sum += grads.loss;
            loss_count += 1;

            sgd_step_params(
                &mut model.params,
                &mut model.io,
                &grads,
                lr,
                momentum,
                weight_decay,
                config.decay_io,
            );
            for v in 0..num_nodes {
                if let Some(cache) = state.caches[v].as_ref() {
                    model.params.update_running_stats(v, cache);
                }
            }

            match &policy {
                WiringPolicy::Learned => {
                    update_edges(&mut model.store, &state, lr, momentum, weight_decay);
                }
                WiringPolicy::LearnedRealOnly | WiringPolicy::Frozen(_) => {
                    update_real_edges_only(
                        &mut model.store,
                        &edges,
                        &state,
                        lr,
                        momentum,
                        weight_decay,
                    );
                }
                WiringPolicy::Anneal { lambda_l1, .. } => {
                    let lambda_l1 = *lambda_l1;
                    for &idx in edges.indices() {
                        let (u, v) = model.store.pair(idx);
                        let w = model.store.weight(idx);
                        let grad = state.z[u].dot(&state.grad_input[v])
                            + weight_decay * w
                            + lambda_l1 * w.signum();
                        model.store.apply_update(idx, grad, lr, momentum);
                    }
                }
            }
            iterations += 1;
        }

        if let WiringPolicy::Anneal { surviving, .. } = &mut policy {
            prune_step(&model, surviving, epoch, config.epochs)?;
        }

        let mean_loss = loss_sum / loss_count.max(1) as f64;
        metrics.push(record(&model, &policy, epoch, Some(mean_loss), &started)?);
    }

    Ok(TrainedModel {
        model,
        initial,
        iterations,
        metrics,
    })
}

fn annotate_iteration(err: Error, iteration: u64) -> Error {
    match err {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("{context} (iteration {iteration})"),
        },
        other => other,
    }
}

pub(crate) fn current_edges(model: &Model, policy: &WiringPolicy) -> EdgeSet {
    let n = model.topology.num_nodes();
    match policy {
        WiringPolicy::Learned | WiringPolicy::LearnedRealOnly => select_edges(&model.store, n),
        WiringPolicy::Frozen(indices) => EdgeSet::from_indices(&model.store, n, indices.clone()),
        WiringPolicy::Anneal { surviving, .. } => {
            let indices = surviving
                .iter()
                .enumerate()
                .filter_map(|(i, &alive)| alive.then_some(i))
                .collect();
            EdgeSet::from_indices(&model.store, n, indices)
        }
    }
}

/// Removes the schedule-determined number of smallest-|w| survivors so that
/// after epoch `epoch` of `total_epochs` exactly
/// `total - round((total - k) * epoch / total_epochs)` remain.
fn prune_step(
    model: &Model,
    surviving: &mut [bool],
    epoch: usize,
    total_epochs: usize,
) -> Result<()> {
    let total = model.store.num_candidates();
    let k = model.store.k();
    let target = total - (((total - k) as f64) * epoch as f64 / total_epochs as f64).round() as usize;
    if target < k {
        return Err(Error::contract(format!(
            "prune schedule would drop below the edge budget ({target} < {k})"
        )));
    }
    let mut alive: Vec<usize> = surviving
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| a.then_some(i))
        .collect();
    if alive.len() <= target {
        return Ok(());
    }
    alive.sort_unstable_by(|&a, &b| {
        model
            .store
            .weight(a)
            .abs()
            .total_cmp(&model.store.weight(b).abs())
            .then(a.cmp(&b))
    });
    for &idx in alive.iter().take(alive.len() - target) {
        surviving[idx] = false;
    }
    Ok(())
}
