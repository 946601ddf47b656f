//! Straight-through reformulation of the edge-update rule.
//!
//! Instead of running over a selected edge list, this route masks the full
//! candidate weight vector: the forward pass uses h(w) = w * 1{|w| >= tau}
//! with tau at the k-th magnitude, and the backward pass treats h as the
//! identity, so every candidate weight receives the dense gradient
//! dI_v/dw_uv = Z_u while gradients flow through masked weights only where
//! the mask is nonzero. With momentum and weight decay off, the weight
//! trajectory matches the explicit implementation step for step.

use std::time::Instant;

use crate::data::Dataset;
use crate::engine::{evaluate, sgd_step_params, Gradients, IoMaps, Model};
use crate::error::{Error, Result};
use crate::graph::{reaches_output, GraphTopology, NodeId};
use crate::numerics::{softmax_cross_entropy, BatchVec};
use crate::params::NodeParams;
use crate::store::select_edges;
use crate::train::{epoch_batches, MetricsRecord, TrainConfig, TrainedModel};

/// Candidate incidence lists over the full universe (mask applied at use).
struct CandidateLists {
    /// all_in[v] = (source u, candidate index), ascending u.
    all_in: Vec<Vec<(NodeId, usize)>>,
    /// all_out[u] = (target v, candidate index), ascending v.
    all_out: Vec<Vec<(NodeId, usize)>>,
}

impl CandidateLists {
    fn new(topology: &GraphTopology, pairs: &[(NodeId, NodeId)]) -> Self {
        let n = topology.num_nodes();
        let mut all_in = vec![Vec::new(); n];
        let mut all_out = vec![Vec::new(); n];
        for (idx, &(u, v)) in pairs.iter().enumerate() {
            all_in[v].push((u, idx));
            all_out[u].push((v, idx));
        }
        CandidateLists { all_in, all_out }
    }
}

struct StepTape {
    z: Vec<BatchVec>,
    grad_input: Vec<BatchVec>,
    live: Vec<bool>,
    caches: Vec<Option<crate::params::NodeOpCache>>,
    logits: Vec<BatchVec>,
}

/// One masked forward pass. `masked` holds w * mask for every candidate.
fn forward_masked(
    model: &Model,
    lists: &CandidateLists,
    masked: &[f64],
    live: &[bool],
    features: &[BatchVec],
) -> Result<StepTape> {
    let topology = &model.topology;
    let io = &model.io;
    let batch = features[0].len();
    let n = topology.num_nodes();
    let mut z = vec![BatchVec::zeros(batch); n];
    let mut caches = vec![None; n];

    for v in topology.input_nodes() {
        let row = &io.input_weight[v * io.features..(v + 1) * io.features];
        let zv = z[v].as_mut_slice();
        for item in zv.iter_mut() {
            *item = io.input_bias[v];
        }
        for (f, feat) in features.iter().enumerate() {
            for (b, item) in zv.iter_mut().enumerate() {
                *item += row[f] * feat.as_slice()[b];
            }
        }
    }

    for v in topology.input_nodes().end..n {
        if !live[v] {
            continue;
        }
        let mut input = BatchVec::zeros(batch);
        for &(u, idx) in &lists.all_in[v] {
            input.add_scaled(masked[idx], &z[u]);
        }
        z[v] = if topology.is_output(v) {
            input
        } else {
            let (out, cache) = model.params.forward_train(v, &input);
            caches[v] = Some(cache);
            out
        };
        if !z[v].all_finite() {
            return Err(Error::non_finite(format!("node {v}")));
        }
    }

    let out_nodes: Vec<NodeId> = topology.output_nodes().collect();
    let mut logits = Vec::with_capacity(io.classes);
    for c in 0..io.classes {
        let row = &io.output_weight[c * io.num_outputs..(c + 1) * io.num_outputs];
        let mut logit = BatchVec::zeros(batch);
        logit.fill(io.output_bias[c]);
        for (j, &v) in out_nodes.iter().enumerate() {
            logit.add_scaled(row[j], &z[v]);
        }
        logits.push(logit);
    }

    Ok(StepTape {
        z,
        grad_input: vec![BatchVec::zeros(batch); n],
        live: live.to_vec(),
        caches,
        logits,
    })
}

/// Masked backward pass plus the dense straight-through edge gradient.
fn backward_masked(
    params: &NodeParams,
    io: &IoMaps,
    topology: &GraphTopology,
    lists: &CandidateLists,
    masked: &[f64],
    tape: &mut StepTape,
    features: &[BatchVec],
    labels: &[usize],
) -> Result<(Gradients, Vec<f64>)> {
    let (loss, d_logits) = softmax_cross_entropy(&tape.logits, labels)?;
    let batch = labels.len();
    let out_nodes: Vec<NodeId> = topology.output_nodes().collect();

    let mut grads = Gradients {
        loss,
        d_input_weight: vec![0.0; io.input_weight.len()],
        d_input_bias: vec![0.0; io.input_bias.len()],
        d_output_weight: vec![0.0; io.output_weight.len()],
        d_output_bias: vec![0.0; io.output_bias.len()],
        d_scale: vec![0.0; topology.num_nodes()],
        d_shift: vec![0.0; topology.num_nodes()],
    };
    for c in 0..io.classes {
        grads.d_output_bias[c] = d_logits[c].sum();
        for (j, &v) in out_nodes.iter().enumerate() {
            grads.d_output_weight[c * io.num_outputs + j] = d_logits[c].dot(&tape.z[v]);
        }
    }

    for v in (0..topology.num_nodes()).rev() {
        let mut d_z = BatchVec::zeros(batch);
        if topology.is_output(v) {
            let j = v - out_nodes[0];
            for c in 0..io.classes {
                d_z.add_scaled(io.output_weight[c * io.num_outputs + j], &d_logits[c]);
            }
        }
        // Flow through the mask: hallucinated entries are zero here.
        for &(w, idx) in &lists.all_out[v] {
            d_z.add_scaled(masked[idx], &tape.grad_input[w]);
        }

        if topology.is_input(v) {
            for (f, feat) in features.iter().enumerate() {
                grads.d_input_weight[v * io.features + f] = d_z.dot(feat);
            }
            grads.d_input_bias[v] = d_z.sum();
            continue;
        }
        if !tape.live[v] {
            continue;
        }
        if topology.is_output(v) {
            tape.grad_input[v] = d_z;
        } else {
            let cache = tape.caches[v]
                .as_ref()
                .ok_or_else(|| Error::contract(format!("missing cache for node {v}")))?;
            let node_grad = params.backward(v, &d_z, cache);
            grads.d_scale[v] = node_grad.d_scale;
            grads.d_shift[v] = node_grad.d_shift;
            tape.grad_input[v] = node_grad.d_input;
        }
    }

    // Straight through h: dI_v/dw_uv = Z_u for every candidate pair.
    let mut d_weights = vec![0.0; masked.len()];
    for v in 0..topology.num_nodes() {
        for &(u, idx) in &lists.all_in[v] {
            d_weights[idx] = tape.z[u].dot(&tape.grad_input[v]);
        }
    }
    Ok((grads, d_weights))
}

/// Trains with masked weights and straight-through gradients. Signature and
/// output match [`crate::train::train`].
pub fn train_straight_through(
    mut model: Model,
    data: &Dataset,
    config: &TrainConfig,
    method: &str,
) -> Result<TrainedModel> {
    config.validate()?;
    if data.train_indices.is_empty() {
        return Err(Error::contract("dataset has no training samples"));
    }
    let started = Instant::now();
    let initial = model.clone();
    let (momentum, weight_decay) = config.effective_momentum_decay();
    let mut rng = crate::numerics::Rng::new(config.seed);
    let lists = CandidateLists::new(&model.topology, model.store.pairs());
    let num_nodes = model.topology.num_nodes();
    let mut iterations = 0u64;
    let mut metrics = Vec::with_capacity(config.epochs + 1);

    let record = |model: &Model, epoch: usize, train_loss: Option<f64>, started: &Instant| {
        let edges = select_edges(&model.store, num_nodes);
        let (train_features, train_labels) = data.train_batch();
        let (eval_loss, train_acc) = evaluate(model, &edges, &train_features, &train_labels)?;
        let test_acc = if data.test_indices.is_empty() {
            0.0
        } else {
            let (test_features, test_labels) = data.test_batch();
            evaluate(model, &edges, &test_features, &test_labels)?.1
        };
        let dead = crate::graph::dead_nodes(&model.topology, &edges.pairs(&model.store));
        Ok::<_, Error>(MetricsRecord {
            epoch,
            train_loss: train_loss.unwrap_or(eval_loss),
            train_acc,
            test_acc,
            active_edges: edges.len(),
            live_nodes: num_nodes - dead.len(),
            method: method.to_string(),
            seed: config.seed,
            wall_ms: started.elapsed().as_millis() as u64,
        })
    };
    metrics.push(record(&model, 0, None, &started)?);

    for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch - 1);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch_indices in epoch_batches(&mut rng, &data.train_indices, config.batch_size) {
            let (features, labels) = data.batch(&batch_indices);

            let selection = select_edges(&model.store, num_nodes);
            let masked: Vec<f64> = (0..model.store.num_candidates())
                .map(|idx| {
                    if selection.contains(idx) {
                        model.store.weight(idx)
                    } else {
                        0.0
                    }
                })
                .collect();
            let live = reaches_output(&model.topology, &selection.pairs(&model.store));

            let mut tape = forward_masked(&model, &lists, &masked, &live, &features)?;
            let (grads, d_weights) = backward_masked(
                &model.params,
                &model.io,
                &model.topology,
                &lists,
                &masked,
                &mut tape,
                &features,
                &labels,
            )?;
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
                if let Some(cache) = tape.caches[v].as_ref() {
                    model.params.update_running_stats(v, cache);
                }
            }
            for idx in 0..model.store.num_candidates() {
                let grad = d_weights[idx] + weight_decay * model.store.weight(idx);
                model.store.apply_update(idx, grad, lr, momentum);
            }
            iterations += 1;
        }
        let mean_loss = loss_sum / loss_count.max(1) as f64;
        metrics.push(record(&model, epoch, Some(mean_loss), &started)?);
    }

    Ok(TrainedModel {
        model,
        initial,
        iterations,
        metrics,
    })
}
