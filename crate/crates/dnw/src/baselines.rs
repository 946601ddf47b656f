//! Comparison wiring-discovery methods: a frozen random graph, the
//! no-update-rule ablation, L1 + anneal pruning, and one-shot magnitude
//! pruning with reinitialized or fine-tuned weights.
//!
//! Every baseline ends with exactly k active edges and shares the training
//! loop, metrics, and paired-seed machinery of the main method.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::Model;
use crate::error::{Error, Result};
use crate::store::select_edges;
use crate::train::{run_training, TrainConfig, TrainedModel, WiringPolicy};

/// Default L1 coefficient for the anneal baseline. The pruning schedule is
/// linear per epoch; neither value is prescribed, so these are declared
/// defaults.
pub const DEFAULT_L1_COEFFICIENT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    RandomGraph,
    NoUpdateRule,
    L1Anneal,
    OneShotPruneReinit,
    OneShotPruneFinetune,
}

impl BaselineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineKind::RandomGraph => "random_graph",
            BaselineKind::NoUpdateRule => "no_update_rule",
            BaselineKind::L1Anneal => "l1_anneal",
            BaselineKind::OneShotPruneReinit => "one_shot_prune_reinit",
            BaselineKind::OneShotPruneFinetune => "one_shot_prune_finetune",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_graph" => Ok(BaselineKind::RandomGraph),
            "no_update_rule" => Ok(BaselineKind::NoUpdateRule),
            "l1_anneal" => Ok(BaselineKind::L1Anneal),
            "one_shot_prune_reinit" => Ok(BaselineKind::OneShotPruneReinit),
            "one_shot_prune_finetune" => Ok(BaselineKind::OneShotPruneFinetune),
            other => Err(Error::config(
                "baseline",
                format!("unknown baseline `{other}`"),
            )),
        }
    }
}

/// The random-graph wiring: the top-k edges of the uniformly initialized
/// store, frozen for all of training.
pub fn random_graph_edges(model: &Model) -> Vec<usize> {
    select_edges(&model.store, model.topology.num_nodes())
        .indices()
        .to_vec()
}

/// Trains with a frozen random wiring; only node/io parameters and the
/// weights of real edges move.
pub fn train_random_graph(
    model: Model,
    data: &Dataset,
    config: &TrainConfig,
    method: &str,
) -> Result<TrainedModel> {
    let frozen = random_graph_edges(&model);
    run_training(model, data, config, method, WiringPolicy::Frozen(frozen))
}

/// Ablation: the update rule touches only the current real edges, so a
/// hallucinated weight never changes and swaps happen only when a real
/// weight shrinks below one.
pub fn train_no_update_rule(
    model: Model,
    data: &Dataset,
    config: &TrainConfig,
    method: &str,
) -> Result<TrainedModel> {
    run_training(model, data, config, method, WiringPolicy::LearnedRealOnly)
}

/// Starts from the complete candidate graph and prunes the smallest-|w|
/// edges every epoch on a linear schedule until k remain, with an L1 term
/// on surviving weights. Pruned edges never return.
pub fn train_l1_anneal(
    model: Model,
    data: &Dataset,
    config: &TrainConfig,
    lambda_l1: f64,
    method: &str,
) -> Result<TrainedModel> {
    let total = model.store.num_candidates();
    if config.epochs == 0 && model.store.k() != total {
        return Err(Error::contract(format!(
            "an empty anneal schedule cannot reach k={} from {total} edges",
            model.store.k()
        )));
    }
    let policy = WiringPolicy::Anneal {
        surviving: vec![true; total],
        lambda_l1,
    };
    run_training(model, data, config, method, policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// Reset every parameter to its initialization, keep only the wiring.
    Reinit,
    /// Keep the trained weights on the surviving sub-graph.
    Finetune,
}

/// One-shot magnitude pruning of a fully trained model: keep the k
/// largest-|w| candidate edges as a frozen wiring, then retrain at
/// `finetune_lr`. `Reinit` requires the stored initialization.
pub fn one_shot_prune(
    trained: &Model,
    initial: Option<&Model>,
    k: usize,
    mode: PruneMode,
    finetune_lr: f64,
    data: &Dataset,
    config: &TrainConfig,
    method: &str,
) -> Result<TrainedModel> {
    let num_nodes = trained.topology.num_nodes();
    let mut ranked: Vec<usize> = (0..trained.store.num_candidates()).collect();
    if k > ranked.len() {
        return Err(Error::Budget {
            requested: k,
            available: ranked.len(),
        });
    }
    ranked.sort_unstable_by(|&a, &b| {
        trained
            .store
            .weight(b)
            .abs()
            .total_cmp(&trained.store.weight(a).abs())
            .then(a.cmp(&b))
    });
    ranked.truncate(k);

    let mut model = match mode {
        PruneMode::Reinit => initial
            .ok_or_else(|| Error::contract("reinit pruning needs the stored initialization"))?
            .clone(),
        PruneMode::Finetune => trained.clone(),
    };
    model.store.set_k(k)?;
    zero_optimizer_state(&mut model);
    let retrain_config = TrainConfig {
        learning_rate: finetune_lr,
        ..config.clone()
    };
    let _ = num_nodes;
    run_training(
        model,
        data,
        &retrain_config,
        method,
        WiringPolicy::Frozen(ranked),
    )
}

/// Full one-shot pipeline: train the complete graph, then prune to the
/// spec'd k and retrain with the chosen mode.
pub fn train_one_shot(
    model: Model,
    data: &Dataset,
    config: &TrainConfig,
    mode: PruneMode,
    method: &str,
) -> Result<TrainedModel> {
    let target_k = model.store.k();
    let mut full = model;
    let total = full.store.num_candidates();
    full.store.set_k(total)?;
    let full_run = run_training(
        full,
        data,
        config,
        &format!("{method}:full"),
        WiringPolicy::Learned,
    )?;
    let finetune_lr = config
        .finetune_learning_rate
        .unwrap_or(config.learning_rate);
    one_shot_prune(
        &full_run.model,
        Some(&full_run.initial),
        target_k,
        mode,
        finetune_lr,
        data,
        config,
        method,
    )
}

fn zero_optimizer_state(model: &mut Model) {
    for idx in 0..model.store.num_candidates() {
        model.store.set_velocity(idx, 0.0);
    }
    model.params.vel_scale.iter_mut().for_each(|v| *v = 0.0);
    model.params.vel_shift.iter_mut().for_each(|v| *v = 0.0);
    model.io.vel_input_weight.iter_mut().for_each(|v| *v = 0.0);
    model.io.vel_input_bias.iter_mut().for_each(|v| *v = 0.0);
    model.io.vel_output_weight.iter_mut().for_each(|v| *v = 0.0);
    model.io.vel_output_bias.iter_mut().for_each(|v| *v = 0.0);
}
