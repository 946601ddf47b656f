//! Forward and backward passes over the real edge set, and the edge-update
//! rule that touches every candidate pair.
//!
//! The forward pass reads only selected ("real") edge weights. The backward
//! pass propagates through real edges only, but the per-node input gradient
//! dL/dI_v is recorded for every node, so the update rule can move
//! hallucinated weights as well: gradient flows *to* but not *through*
//! edges absent from the forward pass.
//!
//! Summation orders are fixed (ascending node index, ascending sample
//! index) so repeated runs and the straight-through reformulation agree
//! bitwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{reaches_output, GraphSpec, GraphTopology, NodeId};
use crate::numerics::{softmax_cross_entropy, BatchVec, Rng};
use crate::params::{Mode, NodeOpCache, NodeParams};
use crate::store::{select_edges, EdgeSet, EdgeStore};

/// Counts weight reads during the forward pass in debug builds, split by
/// whether the edge was in the real set. Tests assert the hallucinated
/// count stays zero.
pub mod audit {
    #[cfg(debug_assertions)]
    use std::cell::Cell;

    #[cfg(debug_assertions)]
    thread_local! {
        static REAL_READS: Cell<u64> = const { Cell::new(0) };
        static HALLUCINATED_READS: Cell<u64> = const { Cell::new(0) };
    }

    #[inline]
    pub fn record_weight_read(is_real: bool) {
        #[cfg(debug_assertions)]
        {
            if is_real {
                REAL_READS.with(|c| c.set(c.get() + 1));
            } else {
                HALLUCINATED_READS.with(|c| c.set(c.get() + 1));
            }
        }
        #[cfg(not(debug_assertions))]
        let _ = is_real;
    }

    /// (real, hallucinated) reads since the last reset. Always (0, 0) in
    /// release builds.
    pub fn counts() -> (u64, u64) {
        #[cfg(debug_assertions)]
        {
            (
                REAL_READS.with(|c| c.get()),
                HALLUCINATED_READS.with(|c| c.get()),
            )
        }
        #[cfg(not(debug_assertions))]
        {
            (0, 0)
        }
    }

    pub fn reset() {
        #[cfg(debug_assertions)]
        {
            REAL_READS.with(|c| c.set(0));
            HALLUCINATED_READS.with(|c| c.set(0));
        }
    }
}

/// Affine input map (raw features to input-node states) and affine output
/// map (output-node states to class logits), with momentum buffers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IoMaps {
    pub features: usize,
    pub classes: usize,
    pub num_inputs: usize,
    pub num_outputs: usize,
    /// [num_inputs x features], row-major.
    pub input_weight: Vec<f64>,
    pub input_bias: Vec<f64>,
    /// [classes x num_outputs], row-major.
    pub output_weight: Vec<f64>,
    pub output_bias: Vec<f64>,
    pub vel_input_weight: Vec<f64>,
    pub vel_input_bias: Vec<f64>,
    pub vel_output_weight: Vec<f64>,
    pub vel_output_bias: Vec<f64>,
}

impl IoMaps {
    /// Weights drawn uniform on (-sqrt(1/fan_in), sqrt(1/fan_in)), input map
    /// first and row-major, biases zero.
    pub fn init(
        rng: &mut Rng,
        features: usize,
        classes: usize,
        num_inputs: usize,
        num_outputs: usize,
    ) -> Result<Self> {
        let in_scale = (1.0 / features as f64).sqrt();
        let mut input_weight = Vec::with_capacity(num_inputs * features);
        for _ in 0..num_inputs * features {
            input_weight.push(rng.uniform(-in_scale, in_scale)?);
        }
        let out_scale = (1.0 / num_outputs as f64).sqrt();
        let mut output_weight = Vec::with_capacity(classes * num_outputs);
        for _ in 0..classes * num_outputs {
            output_weight.push(rng.uniform(-out_scale, out_scale)?);
        }
        Ok(IoMaps {
            features,
            classes,
            num_inputs,
            num_outputs,
            input_weight,
            input_bias: vec![0.0; num_inputs],
            output_weight,
            output_bias: vec![0.0; classes],
            vel_input_weight: vec![0.0; num_inputs * features],
            vel_input_bias: vec![0.0; num_inputs],
            vel_output_weight: vec![0.0; classes * num_outputs],
            vel_output_bias: vec![0.0; classes],
        })
    }
}

/// Per-node batch state recorded by a forward pass and extended by the
/// matching backward pass.
#[derive(Debug, Clone)]
pub struct BatchState {
    pub batch_size: usize,
    /// Post-op node states Z_v; zero for skipped (no-output-path) nodes.
    pub z: Vec<BatchVec>,
    /// Pre-op node inputs I_v (sum over real in-edges only).
    pub input: Vec<BatchVec>,
    /// dL/dI_v for every node; filled by backward, zero until then.
    pub grad_input: Vec<BatchVec>,
    /// Whether the node's op ran (false only for no-output-path nodes).
    pub live: Vec<bool>,
    pub logits: Vec<BatchVec>,
    /// Features the batch was built from, kept for the input-map gradient.
    pub features: Vec<BatchVec>,
    pub(crate) caches: Vec<Option<NodeOpCache>>,
}

/// All parameter gradients from one backward pass. Edge gradients are not
/// materialized here; the update rule reads Z and dL/dI directly.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub d_input_weight: Vec<f64>,
    pub d_input_bias: Vec<f64>,
    pub d_output_weight: Vec<f64>,
    pub d_output_bias: Vec<f64>,
    pub d_scale: Vec<f64>,
    pub d_shift: Vec<f64>,
}

/// A complete static neural graph: topology, candidate-edge store, node
/// parameters, and io maps.
#[derive(Debug, Clone)]
pub struct Model {
    pub topology: GraphTopology,
    pub store: EdgeStore,
    pub params: NodeParams,
    pub io: IoMaps,
}

impl Model {
    /// Builds the graph and io maps from one seed. Edge weights draw first
    /// (ascending pair order), then the input map, then the output map.
    pub fn new(spec: &GraphSpec, features: usize, classes: usize) -> Result<Self> {
        let topology = GraphTopology::new(&spec.blocks, spec.adjacent_only)?;
        if spec.k > topology.num_candidates() {
            return Err(Error::Budget {
                requested: spec.k,
                available: topology.num_candidates(),
            });
        }
        let mut rng = Rng::new(spec.seed);
        let store = EdgeStore::init_uniform(&topology, spec.k, &mut rng)?;
        let params = NodeParams::new(&topology, spec.activation, spec.standardize);
        let io = IoMaps::init(
            &mut rng,
            features,
            classes,
            topology.input_nodes().len(),
            topology.output_nodes().len(),
        )?;
        Ok(Model {
            topology,
            store,
            params,
            io,
        })
    }

    pub fn select(&self) -> EdgeSet {
        select_edges(&self.store, self.topology.num_nodes())
    }

    /// Forward pass over the real edges. See [`forward`].
    pub fn forward(&self, edges: &EdgeSet, features: &[BatchVec], mode: Mode) -> Result<BatchState> {
        forward(self, edges, features, mode, &[])
    }

    /// Backward pass; fills `state.grad_input` and returns parameter
    /// gradients. See [`backward`].
    pub fn backward(
        &self,
        edges: &EdgeSet,
        state: &mut BatchState,
        labels: &[usize],
    ) -> Result<Gradients> {
        backward(self, edges, state, labels)
    }
}

/// Forward pass: node states in topological order using only real edges.
///
/// A node with no path to the output set is skipped and its state defined
/// as zero (it cannot influence the logits); every other non-input node
/// applies its op to the summed real-edge input, so a node with no real
/// in-edges still emits f(0) and keeps receiving a usable input gradient.
/// `offsets` adds the given vectors to the node inputs I_v before the node
/// op; the finite-difference oracle for dL/dI uses this hook.
pub fn forward(
    model: &Model,
    edges: &EdgeSet,
    features: &[BatchVec],
    mode: Mode,
    offsets: &[(NodeId, BatchVec)],
) -> Result<BatchState> {
    let topology = &model.topology;
    let io = &model.io;
    if features.len() != io.features {
        return Err(Error::contract(format!(
            "expected {} feature rows, got {}",
            io.features,
            features.len()
        )));
    }
    let batch = features.first().map_or(0, BatchVec::len);
    if batch == 0 {
        return Err(Error::contract("empty batch"));
    }
    let n = topology.num_nodes();
    let live = reaches_output(topology, &edges.pairs(&model.store));

    let mut state = BatchState {
        batch_size: batch,
        z: vec![BatchVec::zeros(batch); n],
        input: vec![BatchVec::zeros(batch); n],
        grad_input: vec![BatchVec::zeros(batch); n],
        live,
        logits: Vec::new(),
        features: features.to_vec(),
        caches: vec![None; n],
    };

    // Input nodes: Z = input map of the raw features.
    for v in topology.input_nodes() {
        let row = &io.input_weight[v * io.features..(v + 1) * io.features];
        let z = state.z[v].as_mut_slice();
        for item in z.iter_mut() {
            *item = io.input_bias[v];
        }
        for (f, feat) in features.iter().enumerate() {
            for (b, item) in z.iter_mut().enumerate() {
                *item += row[f] * feat.as_slice()[b];
            }
        }
        if !state.z[v].all_finite() {
            return Err(Error::non_finite(format!("input node {v}")));
        }
    }

    for v in topology.input_nodes().end..n {
        if !state.live[v] {
            continue;
        }
        let mut input = BatchVec::zeros(batch);
        for &(u, idx) in edges.in_edges(v) {
            audit::record_weight_read(edges.contains(idx));
            input.add_scaled(model.store.weight(idx), &state.z[u]);
        }
        for (node, offset) in offsets {
            if *node == v {
                input.add_scaled(1.0, offset);
            }
        }
        let z = if topology.is_output(v) {
            // No operation at output nodes.
            input.clone()
        } else {
            match mode {
                Mode::Train => {
                    let (z, cache) = model.params.forward_train(v, &input);
                    state.caches[v] = Some(cache);
                    z
                }
                Mode::Eval => model.params.forward_eval(v, &input),
            }
        };
        if !z.all_finite() {
            return Err(Error::non_finite(format!("node {v}")));
        }
        state.input[v] = input;
        state.z[v] = z;
    }

    // Output map: logits = output_weight * Z_outputs + bias.
    let out_nodes: Vec<NodeId> = topology.output_nodes().collect();
    let mut logits = Vec::with_capacity(io.classes);
    for c in 0..io.classes {
        let row = &io.output_weight[c * io.num_outputs..(c + 1) * io.num_outputs];
        let mut logit = BatchVec::zeros(batch);
        logit.fill(io.output_bias[c]);
        for (j, &v) in out_nodes.iter().enumerate() {
            logit.add_scaled(row[j], &state.z[v]);
        }
        if !logit.all_finite() {
            return Err(Error::non_finite(format!("logit row {c}")));
        }
        logits.push(logit);
    }
    state.logits = logits;
    Ok(state)
}

/// Backward pass: reverse-topological chain rule through real edges only.
///
/// `state.grad_input[v]` is populated for every node, including nodes whose
/// only in-edges are hallucinated (their value is what the update rule
/// sends *to* those edges). Requires a training-mode forward on the same
/// edges and batch.
pub fn backward(
    model: &Model,
    edges: &EdgeSet,
    state: &mut BatchState,
    labels: &[usize],
) -> Result<Gradients> {
    let topology = &model.topology;
    let io = &model.io;
    if state.logits.is_empty() {
        return Err(Error::contract("backward before forward"));
    }
    if labels.len() != state.batch_size {
        return Err(Error::contract(format!(
            "{} labels for batch of {}",
            labels.len(),
            state.batch_size
        )));
    }
    let (loss, d_logits) = softmax_cross_entropy(&state.logits, labels)?;

    let out_nodes: Vec<NodeId> = topology.output_nodes().collect();
    let out_pos = |v: NodeId| v - out_nodes[0];
    let batch = state.batch_size;

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
            grads.d_output_weight[c * io.num_outputs + j] = d_logits[c].dot(&state.z[v]);
        }
    }

    // dZ_v assembled on demand: by reverse order, every consumer of Z_v has
    // its dL/dI ready. Out-edge sums run in ascending target order.
    for v in (0..topology.num_nodes()).rev() {
        let mut d_z = BatchVec::zeros(batch);
        if topology.is_output(v) {
            let j = out_pos(v);
            for c in 0..io.classes {
                d_z.add_scaled(io.output_weight[c * io.num_outputs + j], &d_logits[c]);
            }
        }
        for &(w, idx) in edges.out_edges(v) {
            d_z.add_scaled(model.store.weight(idx), &state.grad_input[w]);
        }

        if topology.is_input(v) {
            // Input-map gradients; I_v does not exist for inputs.
            for (f, feat) in state.features.iter().enumerate() {
                grads.d_input_weight[v * io.features + f] = d_z.dot(feat);
            }
            grads.d_input_bias[v] = d_z.sum();
            continue;
        }
        if !state.live[v] {
            // Skipped in forward: Z_v is identically zero, so dL/dI_v = 0.
            continue;
        }
        if topology.is_output(v) {
            state.grad_input[v] = d_z;
        } else {
            let cache = state.caches[v]
                .as_ref()
                .ok_or_else(|| Error::contract(format!("missing forward cache for node {v}")))?;
            let node_grad = model.params.backward(v, &d_z, cache);
            grads.d_scale[v] = node_grad.d_scale;
            grads.d_shift[v] = node_grad.d_shift;
            state.grad_input[v] = node_grad.d_input;
        }
    }
    Ok(grads)
}

/// The edge-update rule, applied to every candidate pair:
///
/// raw gradient g = <Z_u, dL/dI_v> + weight_decay * w, then an
/// SGD-with-momentum step. With momentum = weight_decay = 0 the weight
/// moves by exactly <Z_u, -lr * dL/dI_v>.
pub fn update_edges(
    store: &mut EdgeStore,
    state: &BatchState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for idx in 0..store.num_candidates() {
        let (u, v) = store.pair(idx);
        let grad = state.z[u].dot(&state.grad_input[v]) + weight_decay * store.weight(idx);
        store.apply_update(idx, grad, lr, momentum);
    }
}

/// Same rule restricted to the given real edge set; hallucinated pairs are
/// untouched (weights and velocities). Baselines use this.
pub fn update_real_edges_only(
    store: &mut EdgeStore,
    edges: &EdgeSet,
    state: &BatchState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for &idx in edges.indices() {
        let (u, v) = store.pair(idx);
        let grad = state.z[u].dot(&state.grad_input[v]) + weight_decay * store.weight(idx);
        store.apply_update(idx, grad, lr, momentum);
    }
}

/// SGD-with-momentum step on node params and io maps. Weight decay applies
/// to io-map weights only when `decay_io` (biases and the scale/shift pairs
/// are exempt).
pub fn sgd_step_params(
    params: &mut NodeParams,
    io: &mut IoMaps,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    decay_io: bool,
) {
    let io_decay = if decay_io { weight_decay } else { 0.0 };
    step_all(
        &mut io.input_weight,
        &mut io.vel_input_weight,
        &grads.d_input_weight,
        lr,
        momentum,
        io_decay,
    );
    step_all(
        &mut io.input_bias,
        &mut io.vel_input_bias,
        &grads.d_input_bias,
        lr,
        momentum,
        0.0,
    );
    step_all(
        &mut io.output_weight,
        &mut io.vel_output_weight,
        &grads.d_output_weight,
        lr,
        momentum,
        io_decay,
    );
    step_all(
        &mut io.output_bias,
        &mut io.vel_output_bias,
        &grads.d_output_bias,
        lr,
        momentum,
        0.0,
    );
    step_all(
        &mut params.scale,
        &mut params.vel_scale,
        &grads.d_scale,
        lr,
        momentum,
        0.0,
    );
    step_all(
        &mut params.shift,
        &mut params.vel_shift,
        &grads.d_shift,
        lr,
        momentum,
        0.0,
    );
}

fn step_all(
    values: &mut [f64],
    velocities: &mut [f64],
    grads: &[f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for i in 0..values.len() {
        let g = grads[i] + weight_decay * values[i];
        velocities[i] = momentum * velocities[i] + g;
        values[i] -= lr * velocities[i];
    }
}

/// Evaluation-mode loss and accuracy over a full feature/label set.
/// Argmax ties resolve to the lowest class index.
pub fn evaluate(
    model: &Model,
    edges: &EdgeSet,
    features: &[BatchVec],
    labels: &[usize],
) -> Result<(f64, f64)> {
    let state = model.forward(edges, features, Mode::Eval)?;
    let (loss, _) = softmax_cross_entropy(&state.logits, labels)?;
    let mut correct = 0usize;
    for b in 0..state.batch_size {
        let mut best = 0;
        let mut best_val = state.logits[0].as_slice()[b];
        for (c, row) in state.logits.iter().enumerate().skip(1) {
            if row.as_slice()[b] > best_val {
                best = c;
                best_val = row.as_slice()[b];
            }
        }
        if best == labels[b] {
            correct += 1;
        }
    }
    Ok((loss, correct as f64 / state.batch_size as f64))
}
