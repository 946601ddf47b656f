//! Discrete- and continuous-time neural graph dynamics.
//!
//! Node states are indexed by time: the discrete form steps
//! Z(l+1) = f(A Z(l), l) with A the weighted adjacency matrix (entry (v, u)
//! holds the weight of edge u -> v), and the continuous form integrates
//! dZ/dt = f(A Z, t) with a fixed-step classical RK4 whose stage tape is
//! retained so gradients backpropagate through the solver.
//!
//! A layered feed-forward network embeds into this picture as a nilpotent
//! block matrix: stacking the per-layer weight matrices below the diagonal
//! makes one matrix application move the signal exactly one layer.
//!
//! Training differences from the static engine: every node computes at
//! every step (no dead-node skipping), the edge rule sums its inner product
//! over time, and evaluation standardizes with current-batch statistics
//! (states are transient, so running estimates would mix time steps).

use std::time::Instant;

use crate::data::Dataset;
use crate::engine::{sgd_step_params, Gradients, Model};
use crate::error::{Error, Result};
use crate::graph::{dead_nodes, NodeId};
use crate::numerics::{softmax_cross_entropy, BatchVec};
use crate::params::NodeOpCache;
use crate::store::{select_edges, EdgeSet};
use crate::train::{epoch_batches, MetricsRecord, TrainConfig, TrainedModel};

/// Dense weighted adjacency over all nodes: `entry(v, u)` is the weight of
/// edge (u, v), so `apply` computes per-node inputs I = A Z.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    n: usize,
    data: Vec<f64>,
}

impl AdjacencyMatrix {
    pub fn zeros(n: usize) -> Self {
        AdjacencyMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::contract("adjacency matrix must be square"));
        }
        Ok(AdjacencyMatrix {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Adjacency of a selected edge set.
    pub fn from_edges(model: &Model, edges: &EdgeSet) -> Self {
        let mut a = AdjacencyMatrix::zeros(model.topology.num_nodes());
        for &idx in edges.indices() {
            let (u, v) = model.store.pair(idx);
            a.set(v, u, model.store.weight(idx));
        }
        a
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn entry(&self, v: NodeId, u: NodeId) -> f64 {
        self.data[v * self.n + u]
    }

    pub fn set(&mut self, v: NodeId, u: NodeId, w: f64) {
        self.data[v * self.n + u] = w;
    }

    /// I = A Z, summing sources in ascending node order.
    pub fn apply(&self, z: &[BatchVec]) -> Vec<BatchVec> {
        let batch = z.first().map_or(0, BatchVec::len);
        (0..self.n)
            .map(|v| {
                let mut acc = BatchVec::zeros(batch);
                for u in 0..self.n {
                    let w = self.entry(v, u);
                    if w != 0.0 {
                        acc.add_scaled(w, &z[u]);
                    }
                }
                acc
            })
            .collect()
    }

    /// y = A^T x, used by reverse-mode accumulation.
    pub fn apply_transpose(&self, x: &[BatchVec]) -> Vec<BatchVec> {
        let batch = x.first().map_or(0, BatchVec::len);
        (0..self.n)
            .map(|u| {
                let mut acc = BatchVec::zeros(batch);
                for v in 0..self.n {
                    let w = self.entry(v, u);
                    if w != 0.0 {
                        acc.add_scaled(w, &x[v]);
                    }
                }
                acc
            })
            .collect()
    }

    /// A * B (both n x n).
    pub fn matmul(&self, other: &AdjacencyMatrix) -> AdjacencyMatrix {
        assert_eq!(self.n, other.n);
        let mut out = AdjacencyMatrix::zeros(self.n);
        for i in 0..self.n {
            for k in 0..self.n {
                let a = self.data[i * self.n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..self.n {
                    out.data[i * self.n + j] += a * other.data[k * self.n + j];
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&w| w == 0.0)
    }
}

/// Time-indexed node states.
#[derive(Debug, Clone)]
pub struct DynamicState {
    pub z: Vec<BatchVec>,
    pub time: f64,
}

impl DynamicState {
    /// Initial conditions: input nodes carry the mapped features, every
    /// other node starts at zero.
    pub fn initial(model: &Model, features: &[BatchVec]) -> Result<Self> {
        let batch = features.first().map_or(0, BatchVec::len);
        if batch == 0 {
            return Err(Error::contract("empty batch"));
        }
        let n = model.topology.num_nodes();
        let mut z = vec![BatchVec::zeros(batch); n];
        for v in model.topology.input_nodes() {
            let row = &model.io.input_weight[v * model.io.features..(v + 1) * model.io.features];
            let zv = z[v].as_mut_slice();
            for item in zv.iter_mut() {
                *item = model.io.input_bias[v];
            }
            for (f, feat) in features.iter().enumerate() {
                for (b, item) in zv.iter_mut().enumerate() {
                    *item += row[f] * feat.as_slice()[b];
                }
            }
        }
        Ok(DynamicState { z, time: 0.0 })
    }

    pub fn from_states(z: Vec<BatchVec>) -> Self {
        DynamicState { z, time: 0.0 }
    }
}

/// One discrete step: Z(l+1) = f(A Z(l), l). The node function receives the
/// node id, its summed input, and the step index.
pub fn step_discrete<F>(
    state: &DynamicState,
    adjacency: &AdjacencyMatrix,
    node_fn: F,
    step: usize,
) -> Result<DynamicState>
where
    F: Fn(NodeId, &BatchVec, usize) -> BatchVec,
{
    if adjacency.num_nodes() != state.z.len() {
        return Err(Error::contract(format!(
            "adjacency is {}x{0} but state has {} nodes",
            adjacency.num_nodes(),
            state.z.len()
        )));
    }
    let inputs = adjacency.apply(&state.z);
    let mut next = Vec::with_capacity(inputs.len());
    for (v, input) in inputs.iter().enumerate() {
        let out = node_fn(v, input, step);
        if !out.all_finite() {
            return Err(Error::non_finite(format!("node {v} at step {step}")));
        }
        next.push(out);
    }
    Ok(DynamicState {
        z: next,
        time: state.time + 1.0,
    })
}

/// Embeds a layered network given per-layer matrices (`w_list[i]` has shape
/// outputs x inputs of layer i) into one adjacency matrix G over the
/// stacked node blocks. G maps a state concentrated on block i to block
/// i+1: G x_hat_i = x_hat_{i+1}, and G^L = 0 for L layers of nodes.
pub fn embed_mlp(w_list: &[Vec<Vec<f64>>]) -> Result<AdjacencyMatrix> {
    if w_list.is_empty() {
        return Err(Error::contract("need at least one layer matrix"));
    }
    let mut dims = vec![w_list[0][0].len()];
    for (i, w) in w_list.iter().enumerate() {
        let rows = w.len();
        if rows == 0 || w.iter().any(|r| r.len() != w[0].len()) {
            return Err(Error::contract(format!("layer {i} matrix is ragged")));
        }
        if w[0].len() != *dims.last().unwrap() {
            return Err(Error::contract(format!(
                "layer {i} expects {} inputs, previous layer outputs {}",
                w[0].len(),
                dims.last().unwrap()
            )));
        }
        dims.push(rows);
    }
    let total: usize = dims.iter().sum();
    let mut offsets = vec![0usize];
    for d in &dims {
        offsets.push(offsets.last().unwrap() + d);
    }
    let mut g = AdjacencyMatrix::zeros(total);
    for (i, w) in w_list.iter().enumerate() {
        let src = offsets[i];
        let dst = offsets[i + 1];
        for (r, row) in w.iter().enumerate() {
            for (c, &value) in row.iter().enumerate() {
                // Edge (src + c) -> (dst + r) with weight W[r][c].
                g.set(dst + r, src + c, value);
            }
        }
    }
    Ok(g)
}

/// Classical fixed-step RK4 for dZ/dt = f(A Z, t) from t0 to t1.
///
/// The step count is round((t1 - t0) / h) with the step size adjusted to
/// land on t1 exactly. Returns the final state and the per-step trajectory
/// (including the initial state).
pub fn integrate<F>(
    state0: &DynamicState,
    adjacency: &AdjacencyMatrix,
    node_fn: F,
    t0: f64,
    t1: f64,
    h: f64,
) -> Result<(DynamicState, Vec<DynamicState>)>
where
    F: Fn(NodeId, &BatchVec, f64) -> BatchVec,
{
    if !(h > 0.0) || !(t1 > t0) {
        return Err(Error::contract("integrate requires h > 0 and t1 > t0"));
    }
    let steps = (((t1 - t0) / h).round() as usize).max(1);
    let dt = (t1 - t0) / steps as f64;
    let n = state0.z.len();
    let batch = state0.z[0].len();

    let derivative = |z: &[BatchVec], t: f64| -> Result<Vec<BatchVec>> {
        let inputs = adjacency.apply(z);
        let mut out = Vec::with_capacity(n);
        for (v, input) in inputs.iter().enumerate() {
            let d = node_fn(v, input, t);
            if !d.all_finite() {
                return Err(Error::non_finite(format!("node {v} at t={t}")));
            }
            out.push(d);
        }
        Ok(out)
    };

    let mut z = state0.z.clone();
    let mut t = t0;
    let mut trajectory = vec![DynamicState {
        z: z.clone(),
        time: t,
    }];
    for _ in 0..steps {
        let k1 = derivative(&z, t)?;
        let y2 = add_scaled_states(&z, dt / 2.0, &k1, batch);
        let k2 = derivative(&y2, t + dt / 2.0)?;
        let y3 = add_scaled_states(&z, dt / 2.0, &k2, batch);
        let k3 = derivative(&y3, t + dt / 2.0)?;
        let y4 = add_scaled_states(&z, dt, &k3, batch);
        let k4 = derivative(&y4, t + dt)?;
        for v in 0..n {
            let zv = z[v].as_mut_slice();
            for b in 0..batch {
                zv[b] += dt / 6.0
                    * (k1[v].as_slice()[b]
                        + 2.0 * k2[v].as_slice()[b]
                        + 2.0 * k3[v].as_slice()[b]
                        + k4[v].as_slice()[b]);
            }
        }
        t += dt;
        trajectory.push(DynamicState {
            z: z.clone(),
            time: t,
        });
    }
    Ok((
        DynamicState { z, time: t },
        trajectory,
    ))
}

fn add_scaled_states(z: &[BatchVec], scale: f64, delta: &[BatchVec], batch: usize) -> Vec<BatchVec> {
    z.iter()
        .zip(delta)
        .map(|(zi, di)| {
            let mut out = BatchVec::zeros(batch);
            for b in 0..batch {
                out.as_mut_slice()[b] = zi.as_slice()[b] + scale * di.as_slice()[b];
            }
            out
        })
        .collect()
}

/// Time discretization for dynamic training.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DynamicMode {
    Discrete { steps: usize },
    Continuous { t1: f64, h: f64 },
}

// ---------------------------------------------------------------------------
// Differentiable node function over the whole node vector, with tape.
// Input and output nodes apply the identity; middle nodes apply the shared
// node op. Parameter gradients accumulate across applications, which is
// exactly the time-summed rule.

struct NodeVecTape {
    caches: Vec<Option<NodeOpCache>>,
}

fn node_vec_forward(model: &Model, inputs: &[BatchVec]) -> (Vec<BatchVec>, NodeVecTape) {
    let n = model.topology.num_nodes();
    let mut out = Vec::with_capacity(n);
    let mut caches = Vec::with_capacity(n);
    for (v, input) in inputs.iter().enumerate() {
        if model.topology.is_input(v) || model.topology.is_output(v) {
            out.push(input.clone());
            caches.push(None);
        } else {
            let (z, cache) = model.params.forward_train(v, input);
            out.push(z);
            caches.push(Some(cache));
        }
    }
    (out, NodeVecTape { caches })
}

fn node_vec_backward(
    model: &Model,
    tape: &NodeVecTape,
    upstream: &[BatchVec],
    d_scale: &mut [f64],
    d_shift: &mut [f64],
) -> Vec<BatchVec> {
    let n = model.topology.num_nodes();
    let mut d_inputs = Vec::with_capacity(n);
    for v in 0..n {
        match &tape.caches[v] {
            None => d_inputs.push(upstream[v].clone()),
            Some(cache) => {
                let grad = model.params.backward(v, &upstream[v], cache);
                d_scale[v] += grad.d_scale;
                d_shift[v] += grad.d_shift;
                d_inputs.push(grad.d_input);
            }
        }
    }
    d_inputs
}

/// dW accumulation: d_weights[u->v] += <source_state_u, d_input_v> for
/// every candidate pair.
fn accumulate_edge_grads(
    model: &Model,
    source_states: &[BatchVec],
    d_inputs: &[BatchVec],
    d_weights: &mut [f64],
) {
    for idx in 0..model.store.num_candidates() {
        let (u, v) = model.store.pair(idx);
        d_weights[idx] += source_states[u].dot(&d_inputs[v]);
    }
}

struct DynamicPass {
    logits: Vec<BatchVec>,
    loss: f64,
    grads: Gradients,
    d_weights: Vec<f64>,
}

/// Forward + reverse through `steps` discrete applications.
fn discrete_pass(
    model: &Model,
    adjacency: &AdjacencyMatrix,
    features: &[BatchVec],
    labels: &[usize],
    steps: usize,
) -> Result<DynamicPass> {
    let n = model.topology.num_nodes();
    let io = &model.io;
    let state0 = DynamicState::initial(model, features)?;
    let batch = state0.z[0].len();

    let mut states = vec![state0.z];
    let mut tapes = Vec::with_capacity(steps);
    for step in 0..steps {
        let inputs = adjacency.apply(states.last().unwrap());
        let (next, tape) = node_vec_forward(model, &inputs);
        for (v, z) in next.iter().enumerate() {
            if !z.all_finite() {
                return Err(Error::non_finite(format!("node {v} at step {step}")));
            }
        }
        states.push(next);
        tapes.push(tape);
    }

    let final_state = states.last().unwrap();
    let out_nodes: Vec<NodeId> = model.topology.output_nodes().collect();
    let mut logits = Vec::with_capacity(io.classes);
    for c in 0..io.classes {
        let row = &io.output_weight[c * io.num_outputs..(c + 1) * io.num_outputs];
        let mut logit = BatchVec::zeros(batch);
        logit.fill(io.output_bias[c]);
        for (j, &v) in out_nodes.iter().enumerate() {
            logit.add_scaled(row[j], &final_state[v]);
        }
        logits.push(logit);
    }
    let (loss, d_logits) = softmax_cross_entropy(&logits, labels)?;

    let mut grads = Gradients {
        loss,
        d_input_weight: vec![0.0; io.input_weight.len()],
        d_input_bias: vec![0.0; io.input_bias.len()],
        d_output_weight: vec![0.0; io.output_weight.len()],
        d_output_bias: vec![0.0; io.output_bias.len()],
        d_scale: vec![0.0; n],
        d_shift: vec![0.0; n],
    };
    for c in 0..io.classes {
        grads.d_output_bias[c] = d_logits[c].sum();
        for (j, &v) in out_nodes.iter().enumerate() {
            grads.d_output_weight[c * io.num_outputs + j] = d_logits[c].dot(&final_state[v]);
        }
    }

    // dZ at the final time: only the output map reads it.
    let mut d_z = vec![BatchVec::zeros(batch); n];
    for (j, &v) in out_nodes.iter().enumerate() {
        for c in 0..io.classes {
            d_z[v].add_scaled(io.output_weight[c * io.num_outputs + j], &d_logits[c]);
        }
    }

    let mut d_weights = vec![0.0; model.store.num_candidates()];
    for step in (0..steps).rev() {
        let d_inputs = node_vec_backward(
            model,
            &tapes[step],
            &d_z,
            &mut grads.d_scale,
            &mut grads.d_shift,
        );
        accumulate_edge_grads(model, &states[step], &d_inputs, &mut d_weights);
        d_z = adjacency.apply_transpose(&d_inputs);
    }

    // d_z now sits at time 0, where the input map produced the state.
    for v in model.topology.input_nodes() {
        for (f, feat) in features.iter().enumerate() {
            grads.d_input_weight[v * io.features + f] = d_z[v].dot(feat);
        }
        grads.d_input_bias[v] = d_z[v].sum();
    }

    Ok(DynamicPass {
        logits,
        loss,
        grads,
        d_weights,
    })
}

/// Forward + reverse through fixed-step RK4 (backprop through the solver).
fn continuous_pass(
    model: &Model,
    adjacency: &AdjacencyMatrix,
    features: &[BatchVec],
    labels: &[usize],
    t1: f64,
    h: f64,
) -> Result<DynamicPass> {
    if !(h > 0.0) || !(t1 > 0.0) {
        return Err(Error::contract("continuous mode requires h > 0 and t1 > 0"));
    }
    let n = model.topology.num_nodes();
    let io = &model.io;
    let steps = ((t1 / h).round() as usize).max(1);
    let dt = t1 / steps as f64;
    let state0 = DynamicState::initial(model, features)?;
    let batch = state0.z[0].len();

    struct StageTape {
        stage_input: Vec<BatchVec>, // y_s (node states fed to f)
        tape: NodeVecTape,
    }
    struct StepTape {
        stages: [StageTape; 4],
    }

    let eval_f = |y: &[BatchVec]| -> Result<(Vec<BatchVec>, NodeVecTape)> {
        let inputs = adjacency.apply(y);
        let (d, tape) = node_vec_forward(model, &inputs);
        for (v, dv) in d.iter().enumerate() {
            if !dv.all_finite() {
                return Err(Error::non_finite(format!("node {v} in rk4 stage")));
            }
        }
        Ok((d, tape))
    };

    let mut z = state0.z;
    let mut step_tapes = Vec::with_capacity(steps);
    for _ in 0..steps {
        let base = z.clone();
        let (k1, t1s) = eval_f(&base)?;
        let y2 = add_scaled_states(&base, dt / 2.0, &k1, batch);
        let (k2, t2s) = eval_f(&y2)?;
        let y3 = add_scaled_states(&base, dt / 2.0, &k2, batch);
        let (k3, t3s) = eval_f(&y3)?;
        let y4 = add_scaled_states(&base, dt, &k3, batch);
        let (k4, t4s) = eval_f(&y4)?;
        for v in 0..n {
            let zv = z[v].as_mut_slice();
            for b in 0..batch {
                zv[b] += dt / 6.0
                    * (k1[v].as_slice()[b]
                        + 2.0 * k2[v].as_slice()[b]
                        + 2.0 * k3[v].as_slice()[b]
                        + k4[v].as_slice()[b]);
            }
        }
        step_tapes.push(StepTape {
            stages: [
                StageTape { stage_input: base, tape: t1s },
                StageTape { stage_input: y2, tape: t2s },
                StageTape { stage_input: y3, tape: t3s },
                StageTape { stage_input: y4, tape: t4s },
            ],
        });
    }

    let out_nodes: Vec<NodeId> = model.topology.output_nodes().collect();
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
    let (loss, d_logits) = softmax_cross_entropy(&logits, labels)?;

    let mut grads = Gradients {
        loss,
        d_input_weight: vec![0.0; io.input_weight.len()],
        d_input_bias: vec![0.0; io.input_bias.len()],
        d_output_weight: vec![0.0; io.output_weight.len()],
        d_output_bias: vec![0.0; io.output_bias.len()],
        d_scale: vec![0.0; n],
        d_shift: vec![0.0; n],
    };
    for c in 0..io.classes {
        grads.d_output_bias[c] = d_logits[c].sum();
        for (j, &v) in out_nodes.iter().enumerate() {
            grads.d_output_weight[c * io.num_outputs + j] = d_logits[c].dot(&z[v]);
        }
    }
    let mut d_z = vec![BatchVec::zeros(batch); n];
    for (j, &v) in out_nodes.iter().enumerate() {
        for c in 0..io.classes {
            d_z[v].add_scaled(io.output_weight[c * io.num_outputs + j], &d_logits[c]);
        }
    }

    let mut d_weights = vec![0.0; model.store.num_candidates()];
    // Reverse of z' = z + dt/6 (k1 + 2 k2 + 2 k3 + k4) with
    // k1 = f(z), k2 = f(z + dt/2 k1), k3 = f(z + dt/2 k2), k4 = f(z + dt k3).
    let mut backprop_stage = |stage: &StageTape, d_k: &[BatchVec]| -> Vec<BatchVec> {
        let d_inputs = node_vec_backward(model, &stage.tape, d_k, &mut grads.d_scale, &mut grads.d_shift);
        accumulate_edge_grads(model, &stage.stage_input, &d_inputs, &mut d_weights);
        adjacency.apply_transpose(&d_inputs)
    };
    for step_tape in step_tapes.iter().rev() {
        let scale = |s: f64, src: &[BatchVec]| -> Vec<BatchVec> {
            src.iter()
                .map(|x| {
                    let mut out = BatchVec::zeros(batch);
                    out.add_scaled(s, x);
                    out
                })
                .collect()
        };
        let add_into = |dst: &mut Vec<BatchVec>, s: f64, src: &[BatchVec]| {
            for (d, x) in dst.iter_mut().zip(src) {
                d.add_scaled(s, x);
            }
        };

        let mut d_k1 = scale(dt / 6.0, &d_z);
        let mut d_k2 = scale(dt / 3.0, &d_z);
        let mut d_k3 = scale(dt / 3.0, &d_z);
        let d_k4 = scale(dt / 6.0, &d_z);

        let d_y4 = backprop_stage(&step_tape.stages[3], &d_k4);
        add_into(&mut d_z, 1.0, &d_y4);
        add_into(&mut d_k3, dt, &d_y4);

        let d_y3 = backprop_stage(&step_tape.stages[2], &d_k3);
        add_into(&mut d_z, 1.0, &d_y3);
        add_into(&mut d_k2, dt / 2.0, &d_y3);

        let d_y2 = backprop_stage(&step_tape.stages[1], &d_k2);
        add_into(&mut d_z, 1.0, &d_y2);
        add_into(&mut d_k1, dt / 2.0, &d_y2);

        let d_y1 = backprop_stage(&step_tape.stages[0], &d_k1);
        add_into(&mut d_z, 1.0, &d_y1);
    }

    for v in model.topology.input_nodes() {
        for (f, feat) in features.iter().enumerate() {
            grads.d_input_weight[v * io.features + f] = d_z[v].dot(feat);
        }
        grads.d_input_bias[v] = d_z[v].sum();
    }

    Ok(DynamicPass {
        logits,
        loss,
        grads,
        d_weights,
    })
}

fn dynamic_pass(
    model: &Model,
    adjacency: &AdjacencyMatrix,
    features: &[BatchVec],
    labels: &[usize],
    mode: DynamicMode,
) -> Result<DynamicPass> {
    match mode {
        DynamicMode::Discrete { steps } => discrete_pass(model, adjacency, features, labels, steps),
        DynamicMode::Continuous { t1, h } => continuous_pass(model, adjacency, features, labels, t1, h),
    }
}

/// One unrolled pass for the given mode: loss, parameter gradients, and the
/// per-candidate time-summed edge gradients. The finite-difference oracle
/// drives this directly.
pub fn dynamic_loss_and_grads(
    model: &Model,
    edges: &EdgeSet,
    features: &[BatchVec],
    labels: &[usize],
    mode: DynamicMode,
) -> Result<(f64, Gradients, Vec<f64>)> {
    let adjacency = AdjacencyMatrix::from_edges(model, edges);
    let pass = dynamic_pass(model, &adjacency, features, labels, mode)?;
    Ok((pass.loss, pass.grads, pass.d_weights))
}

/// Loss/accuracy of a dynamic model on a full batch (current-batch
/// statistics; argmax ties resolve to the lowest class).
pub fn evaluate_dynamic(
    model: &Model,
    edges: &EdgeSet,
    features: &[BatchVec],
    labels: &[usize],
    mode: DynamicMode,
) -> Result<(f64, f64)> {
    let adjacency = AdjacencyMatrix::from_edges(model, edges);
    let pass = dynamic_pass(model, &adjacency, features, labels, mode)?;
    let mut correct = 0usize;
    for b in 0..labels.len() {
        let mut best = 0;
        let mut best_val = pass.logits[0].as_slice()[b];
        for (c, row) in pass.logits.iter().enumerate().skip(1) {
            if row.as_slice()[b] > best_val {
                best = c;
                best_val = row.as_slice()[b];
            }
        }
        if best == labels[b] {
            correct += 1;
        }
    }
    Ok((pass.loss, correct as f64 / labels.len() as f64))
}

/// Trains a dynamic graph with learned wiring: per iteration the top-k
/// edges are re-selected, the loss is unrolled through time, and the edge
/// rule applies the time-summed inner product to every candidate pair.
pub fn train_dynamic(
    model: Model,
    data: &Dataset,
    config: &TrainConfig,
    mode: DynamicMode,
    method: &str,
) -> Result<TrainedModel> {
    run_dynamic(model, data, config, mode, method, true)
}

/// Random-graph control: the edge set is frozen at initialization and only
/// its members receive updates.
pub fn train_dynamic_frozen(
    model: Model,
    data: &Dataset,
    config: &TrainConfig,
    mode: DynamicMode,
    method: &str,
) -> Result<TrainedModel> {
    run_dynamic(model, data, config, mode, method, false)
}

fn run_dynamic(
    mut model: Model,
    data: &Dataset,
    config: &TrainConfig,
    mode: DynamicMode,
    method: &str,
    learned: bool,
) -> Result<TrainedModel> {
    config.validate()?;
    if data.train_indices.is_empty() {
        return Err(Error::contract("dataset has no training samples"));
    }
    let started = Instant::now();
    let initial = model.clone();
    let num_nodes = model.topology.num_nodes();
    let (momentum, weight_decay) = config.effective_momentum_decay();
    let mut rng = crate::numerics::Rng::new(config.seed);
    let frozen = (!learned).then(|| select_edges(&model.store, num_nodes));
    let mut iterations = 0u64;
    let mut metrics = Vec::with_capacity(config.epochs + 1);

    let record = |model: &Model, epoch: usize, train_loss: Option<f64>, started: &Instant| {
        let edges = frozen
            .clone()
            .unwrap_or_else(|| select_edges(&model.store, num_nodes));
        let (train_features, train_labels) = data.train_batch();
        let (eval_loss, train_acc) =
            evaluate_dynamic(model, &edges, &train_features, &train_labels, mode)?;
        let test_acc = if data.test_indices.is_empty() {
            0.0
        } else {
            let (test_features, test_labels) = data.test_batch();
            evaluate_dynamic(model, &edges, &test_features, &test_labels, mode)?.1
        };
        let dead = dead_nodes(&model.topology, &edges.pairs(&model.store));
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
            let edges = frozen
                .clone()
                .unwrap_or_else(|| select_edges(&model.store, num_nodes));
            let adjacency = AdjacencyMatrix::from_edges(&model, &edges);
            let pass = dynamic_pass(&model, &adjacency, &features, &labels, mode)?;
            loss_sum += pass.loss;
            loss_count += 1;

            sgd_step_params(
                &mut model.params,
                &mut model.io,
                &pass.grads,
                lr,
                momentum,
                weight_decay,
                config.decay_io,
            );
            if learned {
                for idx in 0..model.store.num_candidates() {
                    let grad = pass.d_weights[idx] + weight_decay * model.store.weight(idx);
                    model.store.apply_update(idx, grad, lr, momentum);
                }
            } else {
                for &idx in edges.indices() {
                    let grad = pass.d_weights[idx] + weight_decay * model.store.weight(idx);
                    model.store.apply_update(idx, grad, lr, momentum);
                }
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn single_step_moves_state_along_edges() {
        // A = [[0,0],[1,0]] (edge 0 -> 1), identity f, Z(0) = (5, 0).
        let a = AdjacencyMatrix::from_dense(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let state = DynamicState::from_states(vec![
            BatchVec::from_vec(vec![5.0]),
            BatchVec::from_vec(vec![0.0]),
        ]);
        let next = step_discrete(&state, &a, |_, input, _| input.clone(), 0).unwrap();
        assert_eq!(next.z[0].as_slice(), &[0.0]);
        assert_eq!(next.z[1].as_slice(), &[5.0]);
    }

    #[test]
    fn zero_adjacency_applies_node_fn_to_zero() {
        let a = AdjacencyMatrix::zeros(3);
        let state = DynamicState::from_states(vec![BatchVec::from_vec(vec![1.0, 2.0]); 3]);
        let next = step_discrete(
            &state,
            &a,
            |_, input, _| {
                let mut out = input.clone();
                out.as_mut_slice().iter_mut().for_each(|x| *x += 0.5);
                out
            },
            0,
        )
        .unwrap();
        for v in 0..3 {
            assert_eq!(next.z[v].as_slice(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn matrix_form_equals_per_node_sum() {
        let mut rng = Rng::new(12);
        let n = 6;
        let batch = 4;
        let mut a = AdjacencyMatrix::zeros(n);
        for v in 0..n {
            for u in 0..n {
                if rng.next_f64() < 0.4 {
                    a.set(v, u, rng.uniform(-1.0, 1.0).unwrap());
                }
            }
        }
        let z: Vec<BatchVec> = (0..n)
            .map(|_| {
                BatchVec::from_vec((0..batch).map(|_| rng.uniform(-2.0, 2.0).unwrap()).collect())
            })
            .collect();
        let matrix_form = a.apply(&z);
        for v in 0..n {
            for b in 0..batch {
                let mut per_node = 0.0;
                for u in 0..n {
                    per_node += a.entry(v, u) * z[u].as_slice()[b];
                }
                assert!((matrix_form[v].as_slice()[b] - per_node).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlp_embedding_moves_signal_one_layer_per_step() {
        let mut rng = Rng::new(3);
        let rand_mat = |rows: usize, cols: usize, rng: &mut Rng| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| (0..cols).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect())
                .collect()
        };
        let w1 = rand_mat(3, 3, &mut rng);
        let w2 = rand_mat(3, 3, &mut rng);
        let g = embed_mlp(&[w1.clone(), w2.clone()]).unwrap();
        assert_eq!(g.num_nodes(), 9);

        let x0: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect();
        let mut x_hat0 = vec![BatchVec::zeros(1); 9];
        for (i, &x) in x0.iter().enumerate() {
            x_hat0[i] = BatchVec::from_vec(vec![x]);
        }
        let x_hat1 = g.apply(&x_hat0);
        // Block 0 and block 2 stay zero; block 1 holds W1 x0 exactly.
        for i in 0..3 {
            assert_eq!(x_hat1[i].as_slice()[0], 0.0);
            assert_eq!(x_hat1[6 + i].as_slice()[0], 0.0);
            let expected: f64 = (0..3).map(|j| w1[i][j] * x0[j]).sum();
            assert_eq!(x_hat1[3 + i].as_slice()[0].to_bits(), expected.to_bits());
        }
        let x_hat2 = g.apply(&x_hat1);
        for i in 0..3 {
            assert_eq!(x_hat2[i].as_slice()[0], 0.0);
            assert_eq!(x_hat2[3 + i].as_slice()[0], 0.0);
            let x1: Vec<f64> = (0..3)
                .map(|r| (0..3).map(|j| w1[r][j] * x0[j]).sum())
                .collect();
            let expected: f64 = (0..3).map(|j| w2[i][j] * x1[j]).sum();
            assert!((x_hat2[6 + i].as_slice()[0] - expected).abs() < 1e-15);
        }

        // Nilpotency: G^3 = 0 exactly for three node layers.
        let g2 = g.matmul(&g);
        let g3 = g2.matmul(&g);
        assert!(!g2.is_zero());
        assert!(g3.is_zero());
    }

    #[test]
    fn embedding_rejects_dimension_mismatch() {
        let w1 = vec![vec![1.0, 2.0]; 3]; // 3x2
        let w2 = vec![vec![1.0, 2.0]; 2]; // 2x2, expects 3 inputs
        assert!(embed_mlp(&[w1, w2]).is_err());
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        // dz/dt = -z, z(0) = 1, so z(1) = e^{-1}.
        let a = AdjacencyMatrix::from_dense(&[vec![-1.0]]).unwrap();
        let z0 = DynamicState::from_states(vec![BatchVec::from_vec(vec![1.0])]);
        let (end, trajectory) =
            integrate(&z0, &a, |_, input, _| input.clone(), 0.0, 1.0, 1e-3).unwrap();
        assert_eq!(trajectory.len(), 1001);
        let exact = (-1.0f64).exp();
        assert!((end.z[0].as_slice()[0] - exact).abs() < 1e-6);
    }

    #[test]
    fn zero_derivative_preserves_state() {
        let a = AdjacencyMatrix::zeros(2);
        let z0 = DynamicState::from_states(vec![
            BatchVec::from_vec(vec![1.5]),
            BatchVec::from_vec(vec![-0.25]),
        ]);
        let (end, _) = integrate(&z0, &a, |_, _, _| BatchVec::zeros(1), 0.0, 2.0, 0.1).unwrap();
        assert_eq!(end.z[0].as_slice()[0], 1.5);
        assert_eq!(end.z[1].as_slice()[0], -0.25);
    }

    #[test]
    fn rk4_error_shrinks_sixteenfold_per_halving() {
        let a = AdjacencyMatrix::from_dense(&[vec![-1.0]]).unwrap();
        let z0 = DynamicState::from_states(vec![BatchVec::from_vec(vec![1.0])]);
        let exact = (-1.0f64).exp();
        let error_at = |h: f64| {
            let (end, _) = integrate(&z0, &a, |_, input, _| input.clone(), 0.0, 1.0, h).unwrap();
            (end.z[0].as_slice()[0] - exact).abs()
        };
        let e1 = error_at(0.1);
        let e2 = error_at(0.05);
        let order = (e1 / e2).log2();
        assert!((3.7..=4.3).contains(&order), "observed order {order}");
    }
}
