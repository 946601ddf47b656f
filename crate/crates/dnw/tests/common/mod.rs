//! Shared helpers for integration tests: random graph specs, batches, a
//! loss closure over a model with a fixed edge set, and the full-model
//! finite-difference gradient audit.

#![allow(dead_code)]

use dnw::engine::{forward, Model};
use dnw::graph::{GraphSpec, NodeId};
use dnw::numerics::{
    finite_difference_gradient, grad_error, softmax_cross_entropy, Activation, BatchVec, Rng,
};
use dnw::params::Mode;
use dnw::store::EdgeSet;

/// Random spec with bounded node count; the budget k is drawn uniformly
/// over the feasible range (at least 1).
pub fn random_spec(rng: &mut Rng, max_nodes: usize, activation: Activation) -> GraphSpec {
    loop {
        let num_blocks = 2 + rng.index(3);
        let mut blocks = Vec::with_capacity(num_blocks);
        for _ in 0..num_blocks {
            blocks.push(1 + rng.index(4));
        }
        let total: usize = blocks.iter().sum();
        if total > max_nodes {
            continue;
        }
        let mut pairs = 0;
        for i in 0..num_blocks {
            for j in (i + 1)..num_blocks {
                pairs += blocks[i] * blocks[j];
            }
        }
        let k = 1 + rng.index(pairs);
        return GraphSpec {
            blocks,
            k,
            activation,
            seed: rng.next_u64(),
            standardize: true,
            adjacent_only: false,
        };
    }
}

pub fn random_batch(rng: &mut Rng, features: usize, batch: usize) -> Vec<BatchVec> {
    (0..features)
        .map(|_| {
            BatchVec::from_vec(
                (0..batch)
                    .map(|_| rng.uniform(-1.5, 1.5).unwrap())
                    .collect(),
            )
        })
        .collect()
}

pub fn random_labels(rng: &mut Rng, classes: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.index(classes)).collect()
}

/// Whether the central-difference oracle is ill-conditioned for this
/// forward state. Two measure-thin degeneracies break it at h = 1e-5 even
/// when the analytic gradient is exact:
///
/// - a live relu node with a pre-activation near the kink (the pinned
///   subgradient at 0 differs from the straddling secant, and the
///   standardization gain reaches 1/sqrt(eps) ~ 316 for near-constant
///   inputs, so "near" means within ~1e-2);
/// - a live standardized node whose input batch has near-zero variance:
///   d/dx of 1/sqrt(var + eps) has curvature ~ eps^(-5/2) there, so the
///   truncation error of the secant exceeds the gradient tolerance.
///
/// Both arise from exactly-constant node inputs (nodes with no real
/// in-edges), not from generic weights; gradient checks resample.
pub fn at_relu_kink(model: &Model, state: &dnw::engine::BatchState) -> bool {
    const KINK_MARGIN: f64 = 1e-2;
    const MIN_BATCH_VAR: f64 = 1e-2;
    (0..model.topology.num_nodes()).any(|v| {
        if model.topology.is_input(v) || model.topology.is_output(v) || !state.live[v] {
            return false;
        }
        let input = state.input[v].as_slice();
        let batch = input.len() as f64;
        let (mean, var, inv_std) = if model.params.standardize {
            let mean = input.iter().sum::<f64>() / batch;
            let var = input.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / batch;
            (mean, var, 1.0 / (var + dnw::params::STANDARDIZE_EPS).sqrt())
        } else {
            (0.0, f64::INFINITY, 1.0)
        };
        if model.params.standardize && input.len() > 1 && var < MIN_BATCH_VAR {
            return true;
        }
        if model.params.activation == Activation::Relu {
            return input.iter().any(|&x| {
                let pre = model.params.scale[v] * (x - mean) * inv_std + model.params.shift[v];
                pre.abs() < KINK_MARGIN
            });
        }
        false
    })
}

/// Training-mode loss at a fixed edge set, with optional additive offsets
/// on node inputs (the hook the dL/dI oracle uses).
pub fn loss_at(
    model: &Model,
    edges: &EdgeSet,
    features: &[BatchVec],
    labels: &[usize],
    offsets: &[(NodeId, BatchVec)],
) -> f64 {
    let state = forward(model, edges, features, Mode::Train, offsets).unwrap();
    softmax_cross_entropy(&state.logits, labels).unwrap().0
}

/// Every analytic gradient of one model on one batch against the
/// central-difference oracle at `h`: real edge weights, node scale/shift,
/// both io maps, and dL/dI for every non-input node. Returns the worst
/// scaled error.
pub fn check_model_gradients(
    model: &Model,
    features: &[BatchVec],
    labels: &[usize],
    h: f64,
) -> f64 {
    let edges = model.select();
    let mut state = model.forward(&edges, features, Mode::Train).unwrap();
    let grads = model.backward(&edges, &mut state, labels).unwrap();
    let mut worst: f64 = 0.0;

    for &idx in edges.indices() {
        let (u, v) = model.store.pair(idx);
        let analytic = state.z[u].dot(&state.grad_input[v]);
        let fd = finite_difference_gradient(
            |x| {
                let mut m = model.clone();
                m.store.set_weight(idx, x[0]);
                loss_at(&m, &edges, features, labels, &[])
            },
            &[model.store.weight(idx)],
            h,
        )
        .unwrap()[0];
        worst = worst.max(grad_error(analytic, fd));
    }

    for v in 0..model.topology.num_nodes() {
        if model.topology.is_input(v) || model.topology.is_output(v) || !state.live[v] {
            continue;
        }
        let fd = finite_difference_gradient(
            |x| {
                let mut m = model.clone();
                m.params.scale[v] = x[0];
                m.params.shift[v] = x[1];
                loss_at(&m, &edges, features, labels, &[])
            },
            &[model.params.scale[v], model.params.shift[v]],
            h,
        )
        .unwrap();
        worst = worst.max(grad_error(grads.d_scale[v], fd[0]));
        worst = worst.max(grad_error(grads.d_shift[v], fd[1]));
    }

    for i in 0..model.io.input_weight.len() {
        let fd = finite_difference_gradient(
            |x| {
                let mut m = model.clone();
                m.io.input_weight[i] = x[0];
                loss_at(&m, &edges, features, labels, &[])
            },
            &[model.io.input_weight[i]],
            h,
        )
        .unwrap()[0];
        worst = worst.max(grad_error(grads.d_input_weight[i], fd));
    }
    for i in 0..model.io.input_bias.len() {
        let fd = finite_difference_gradient(
            |x| {
                let mut m = model.clone();
                m.io.input_bias[i] = x[0];
                loss_at(&m, &edges, features, labels, &[])
            },
            &[model.io.input_bias[i]],
            h,
        )
        .unwrap()[0];
        worst = worst.max(grad_error(grads.d_input_bias[i], fd));
    }
    for i in 0..model.io.output_weight.len() {
        let fd = finite_difference_gradient(
            |x| {
                let mut m = model.clone();
                m.io.output_weight[i] = x[0];
                loss_at(&m, &edges, features, labels, &[])
            },
            &[model.io.output_weight[i]],
            h,
        )
        .unwrap()[0];
        worst = worst.max(grad_error(grads.d_output_weight[i], fd));
    }
    for i in 0..model.io.output_bias.len() {
        let fd = finite_difference_gradient(
            |x| {
                let mut m = model.clone();
                m.io.output_bias[i] = x[0];
                loss_at(&m, &edges, features, labels, &[])
            },
            &[model.io.output_bias[i]],
            h,
        )
        .unwrap()[0];
        worst = worst.max(grad_error(grads.d_output_bias[i], fd));
    }

    let batch = state.batch_size;
    for v in model.topology.input_nodes().end..model.topology.num_nodes() {
        let fd = finite_difference_gradient(
            |x| {
                let offset = BatchVec::from_vec(x.to_vec());
                loss_at(model, &edges, features, labels, &[(v, offset)])
            },
            &vec![0.0; batch],
            h,
        )
        .unwrap();
        for b in 0..batch {
            worst = worst.max(grad_error(state.grad_input[v].as_slice()[b], fd[b]));
        }
    }
    worst
}
