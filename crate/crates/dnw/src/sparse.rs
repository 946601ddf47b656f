//! Sparse training of conventional dense layers: each step, every layer's
//! forward pass uses only its top keep_fraction of weights by magnitude,
//! while the backward pass is dense — gradients flow to, but not through,
//! the masked-out weights, and the dense SGD update touches every entry.
//! Biases stay dense. There is no retraining or fine-tuning phase; the
//! sparsity holds from the first step.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{softmax_cross_entropy, Activation, BatchVec, Rng};
use crate::train::{epoch_batches, MetricsRecord, TrainConfig};

/// Layer-stack description: `layers` lists unit counts from input features
/// to class logits. `dense_first_layer` mirrors the variant that exempts
/// the first layer from masking.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseConfig {
    pub layers: Vec<usize>,
    pub keep_fraction: f64,
    #[serde(default)]
    pub dense_first_layer: bool,
}

impl SparseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::config("layers", "need at least input and output sizes"));
        }
        if self.layers.iter().any(|&s| s == 0) {
            return Err(Error::config("layers", "layer sizes must be positive"));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::config("keep_fraction", "must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Boolean mask keeping the ceil(fraction * n) largest-magnitude entries;
/// ties break by ascending flat index.
pub fn mask_topk_fraction(weights: &[f64], fraction: f64) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::contract(format!(
            "keep fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = weights.len();
    let keep = (fraction * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &idx in order.iter().take(keep) {
        mask[idx] = true;
    }
    Ok(mask)
}

/// One fully connected layer under a magnitude mask.
#[derive(Debug, Clone)]
pub struct MaskedLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// outputs x inputs, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub keep_fraction: f64,
    /// Dense layers skip masking entirely.
    pub dense: bool,
    vel_weight: Vec<f64>,
    vel_bias: Vec<f64>,
}

impl MaskedLayer {
    fn init(inputs: usize, outputs: usize, keep_fraction: f64, dense: bool, rng: &mut Rng) -> Result<Self> {
        let scale = (1.0 / inputs as f64).sqrt();
        let mut weight = Vec::with_capacity(outputs * inputs);
        for _ in 0..outputs * inputs {
            weight.push(rng.uniform(-scale, scale)?);
        }
        Ok(MaskedLayer {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
            keep_fraction,
            dense,
            vel_weight: vec![0.0; outputs * inputs],
            vel_bias: vec![0.0; outputs],
        })
    }

    pub fn current_mask(&self) -> Result<Vec<bool>> {
        if self.dense {
            Ok(vec![true; self.weight.len()])
        } else {
            mask_topk_fraction(&self.weight, self.keep_fraction)
        }
    }

    pub fn active_weights(&self, mask: &[bool]) -> usize {
        mask.iter().filter(|&&m| m).count()
    }
}

/// A stack of masked layers with ReLU between them and linear logits.
#[derive(Debug, Clone)]
pub struct LayerStack {
    pub layers: Vec<MaskedLayer>,
    pub activation: Activation,
}

/// How masks evolve: recomputed from current magnitudes every step, or
/// frozen at their initial state (the random-mask control).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    PerStep,
    Frozen,
}

impl LayerStack {
    pub fn init(config: &SparseConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut layers = Vec::new();
        for i in 0..config.layers.len() - 1 {
            let dense = config.dense_first_layer && i == 0;
            layers.push(MaskedLayer::init(
                config.layers[i],
                config.layers[i + 1],
                config.keep_fraction,
                dense,
                &mut rng,
            )?);
        }
        Ok(LayerStack {
            layers,
            activation: Activation::Relu,
        })
    }

    /// Masked forward returning logits plus per-layer caches (inputs and
    /// pre-activations) for the backward pass.
    fn forward(
        &self,
        masks: &[Vec<bool>],
        features: &[BatchVec],
    ) -> Result<(Vec<BatchVec>, Vec<Vec<BatchVec>>, Vec<Vec<BatchVec>>)> {
        let mut x: Vec<BatchVec> = features.to_vec();
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            if x.len() != layer.inputs {
                return Err(Error::contract(format!(
                    "layer {l} expects {} inputs, got {}",
                    layer.inputs,
                    x.len()
                )));
            }
            let batch = x[0].len();
            let mask = &masks[l];
            let mut pre = Vec::with_capacity(layer.outputs);
            for o in 0..layer.outputs {
                let mut acc = BatchVec::zeros(batch);
                acc.fill(layer.bias[o]);
                for (i, xi) in x.iter().enumerate() {
                    let idx = o * layer.inputs + i;
                    if mask[idx] {
                        acc.add_scaled(layer.weight[idx], xi);
                    }
                }
                if !acc.all_finite() {
                    return Err(Error::non_finite(format!("layer {l} unit {o}")));
                }
                pre.push(acc);
            }
            layer_inputs.push(x);
            let last = l + 1 == self.layers.len();
            x = if last {
                pre.clone()
            } else {
                pre.iter()
                    .map(|p| {
                        let mut out = BatchVec::zeros(batch);
                        for b in 0..batch {
                            out.as_mut_slice()[b] = self.activation.apply(p.as_slice()[b]);
                        }
                        out
                    })
                    .collect()
            };
            pre_acts.push(pre);
        }
        Ok((x, layer_inputs, pre_acts))
    }

    pub fn logits(&self, masks: &[Vec<bool>], features: &[BatchVec]) -> Result<Vec<BatchVec>> {
        Ok(self.forward(masks, features)?.0)
    }

    pub fn evaluate(
        &self,
        masks: &[Vec<bool>],
        features: &[BatchVec],
        labels: &[usize],
    ) -> Result<(f64, f64)> {
        let logits = self.logits(masks, features)?;
        let (loss, _) = softmax_cross_entropy(&logits, labels)?;
        let mut correct = 0usize;
        for b in 0..labels.len() {
            let mut best = 0;
            let mut best_val = logits[0].as_slice()[b];
            for (c, row) in logits.iter().enumerate().skip(1) {
                if row.as_slice()[b] > best_val {
                    best = c;
                    best_val = row.as_slice()[b];
                }
            }
            if best == labels[b] {
                correct += 1;
            }
        }
        Ok((loss, correct as f64 / labels.len() as f64))
    }
}

/// One training step: masked forward, dense straight-through backward, and
/// a dense SGD-with-momentum update of every weight and bias. Returns the
/// batch loss.
pub fn sparse_step(
    stack: &mut LayerStack,
    masks: &[Vec<bool>],
    features: &[BatchVec],
    labels: &[usize],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<f64> {
    let (logits, layer_inputs, pre_acts) = stack.forward(masks, features)?;
    let (loss, d_logits) = softmax_cross_entropy(&logits, labels)?;
    let batch = labels.len();

    let mut d_out = d_logits;
    for l in (0..stack.layers.len()).rev() {
        let layer = &stack.layers[l];
        let mask = &masks[l];
        let last = l + 1 == stack.layers.len();
        // Through the activation (the final layer is linear).
        if !last {
            for o in 0..layer.outputs {
                for b in 0..batch {
                    let slope = stack
                        .activation
                        .derivative(pre_acts[l][o].as_slice()[b]);
                    d_out[o].as_mut_slice()[b] *= slope;
                }
            }
        }
        // Dense weight gradients: every entry receives one, masked or not.
        let x = &layer_inputs[l];
        let mut d_weight = vec![0.0; layer.weight.len()];
        let mut d_bias = vec![0.0; layer.outputs];
        for o in 0..layer.outputs {
            d_bias[o] = d_out[o].sum();
            for (i, xi) in x.iter().enumerate() {
                d_weight[o * layer.inputs + i] = d_out[o].dot(xi);
            }
        }
        // Flow-through uses the masked weights only.
        let mut d_x = vec![BatchVec::zeros(batch); layer.inputs];
        for o in 0..layer.outputs {
            for i in 0..layer.inputs {
                let idx = o * layer.inputs + i;
                if mask[idx] {
                    d_x[i].add_scaled(layer.weight[idx], &d_out[o]);
                }
            }
        }

        let layer = &mut stack.layers[l];
        for idx in 0..layer.weight.len() {
            let g = d_weight[idx] + weight_decay * layer.weight[idx];
            layer.vel_weight[idx] = momentum * layer.vel_weight[idx] + g;
            layer.weight[idx] -= lr * layer.vel_weight[idx];
        }
        for o in 0..layer.outputs {
            layer.vel_bias[o] = momentum * layer.vel_bias[o] + d_bias[o];
            layer.bias[o] -= lr * layer.vel_bias[o];
        }
        d_out = d_x;
    }
    Ok(loss)
}

/// A finished sparse run with its per-step active-weight trace.
#[derive(Debug, Clone)]
pub struct SparseRun {
    pub stack: LayerStack,
    pub metrics: Vec<MetricsRecord>,
    /// Total active weights across sparse layers, one entry per step.
    pub step_active_counts: Vec<usize>,
}

/// Trains a layer stack on a dataset. `mask_mode` distinguishes adaptive
/// top-k masks from the frozen-at-init control.
pub fn train_sparse(
    config: &SparseConfig,
    data: &Dataset,
    train_config: &TrainConfig,
    mask_mode: MaskMode,
    method: &str,
) -> Result<SparseRun> {
    config.validate()?;
    train_config.validate()?;
    if data.num_features() != config.layers[0] {
        return Err(Error::config(
            "layers",
            format!(
                "first layer size {} does not match dataset features {}",
                config.layers[0],
                data.num_features()
            ),
        ));
    }
    let started = Instant::now();
    let mut stack = LayerStack::init(config, train_config.seed)?;
    let frozen_masks: Option<Vec<Vec<bool>>> = match mask_mode {
        MaskMode::Frozen => Some(
            stack
                .layers
                .iter()
                .map(|l| l.current_mask())
                .collect::<Result<_>>()?,
        ),
        MaskMode::PerStep => None,
    };
    let masks_now = |stack: &LayerStack| -> Result<Vec<Vec<bool>>> {
        match &frozen_masks {
            Some(m) => Ok(m.clone()),
            None => stack.layers.iter().map(|l| l.current_mask()).collect(),
        }
    };

    let (momentum, weight_decay) = train_config.effective_momentum_decay();
    let mut rng = Rng::new(train_config.seed);
    let mut metrics = Vec::with_capacity(train_config.epochs + 1);
    let mut step_active_counts = Vec::new();

    let record = |stack: &LayerStack, epoch: usize, train_loss: Option<f64>, started: &Instant| {
        let masks = masks_now(stack)?;
        let (train_features, train_labels) = data.train_batch();
        let (eval_loss, train_acc) = stack.evaluate(&masks, &train_features, &train_labels)?;
        let test_acc = if data.test_indices.is_empty() {
            0.0
        } else {
            let (f, l) = data.test_batch();
            stack.evaluate(&masks, &f, &l)?.1
        };
        let active: usize = stack
            .layers
            .iter()
            .zip(&masks)
            .filter(|(l, _)| !l.dense)
            .map(|(l, m)| l.active_weights(m))
            .sum();
        // Units that still receive signal through at least one active weight.
        let live: usize = stack
            .layers
            .iter()
            .zip(&masks)
            .map(|(l, m)| {
                (0..l.outputs)
                    .filter(|&o| (0..l.inputs).any(|i| m[o * l.inputs + i]))
                    .count()
            })
            .sum();
        Ok::<_, Error>(MetricsRecord {
            epoch,
            train_loss: train_loss.unwrap_or(eval_loss),
            train_acc,
            test_acc,
            active_edges: active,
            live_nodes: live,
            method: method.to_string(),
            seed: train_config.seed,
            wall_ms: started.elapsed().as_millis() as u64,
        })
    };
    metrics.push(record(&stack, 0, None, &started)?);

    for epoch in 1..=train_config.epochs {
        let lr = train_config.lr_at(epoch - 1);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch_indices in epoch_batches(&mut rng, &data.train_indices, train_config.batch_size)
        {
            let (features, labels) = data.batch(&batch_indices);
            let masks = masks_now(&stack)?;
            step_active_counts.push(
                stack
                    .layers
                    .iter()
                    .zip(&masks)
                    .filter(|(l, _)| !l.dense)
                    .map(|(l, m)| l.active_weights(m))
                    .sum(),
            );
            loss_sum += sparse_step(
                &mut stack,
                &masks,
                &features,
                &labels,
                lr,
                momentum,
                weight_decay,
            )?;
            loss_count += 1;
        }
        let mean_loss = loss_sum / loss_count.max(1) as f64;
        metrics.push(record(&stack, epoch, Some(mean_loss), &started)?);
    }

    Ok(SparseRun {
        stack,
        metrics,
        step_active_counts,
    })
}
