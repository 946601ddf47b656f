//! Per-node parameters and the scalar node operation.
//!
//! Every non-input, non-output node applies
//! `act(scale * standardize(x) + shift)`, where standardize subtracts the
//! batch mean and divides by sqrt(batch var + 1e-5) in training mode and
//! uses running statistics (momentum 0.9) in evaluation mode. Output nodes
//! apply no operation; input nodes carry no parameters. Standardization can
//! be switched off, leaving `act(scale * x + shift)`.

use serde::{Deserialize, Serialize};

use crate::graph::{GraphTopology, NodeId};
use crate::numerics::{Activation, BatchVec};

pub const STANDARDIZE_EPS: f64 = 1e-5;
const RUNNING_MOMENTUM: f64 = 0.9;

/// Learnable scale/shift, activation kind, and running batch statistics for
/// every node. Entries for input and output nodes exist but are inert.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeParams {
    pub activation: Activation,
    pub standardize: bool,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub vel_scale: Vec<f64>,
    pub vel_shift: Vec<f64>,
}

/// Training-mode caches needed to run the node op backward.
#[derive(Debug, Clone)]
pub struct NodeOpCache {
    pub normalized: BatchVec,
    pub inv_std: f64,
    pub pre_act: BatchVec,
    pub batch_mean: f64,
    pub batch_var: f64,
}

/// Gradient of one node op application.
pub struct NodeOpGrad {
    pub d_input: BatchVec,
    pub d_scale: f64,
    pub d_shift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl NodeParams {
    pub fn new(topology: &GraphTopology, activation: Activation, standardize: bool) -> Self {
        let n = topology.num_nodes();
        NodeParams {
            activation,
            standardize,
            scale: vec![1.0; n],
            shift: vec![0.0; n],
            running_mean: vec![0.0; n],
            running_var: vec![1.0; n],
            vel_scale: vec![0.0; n],
            vel_shift: vec![0.0; n],
        }
    }

    /// Applies the node op at `node` in training mode and returns the output
    /// with the caches backward needs.
    pub fn forward_train(&self, node: NodeId, input: &BatchVec) -> (BatchVec, NodeOpCache) {
        let batch = input.len();
        let (mean, var, inv_std) = if self.standardize {
            let mean = input.mean();
            let mut var = 0.0;
            for &x in input.as_slice() {
                let d = x - mean;
                var += d * d;
            }
            var /= batch as f64;
            (mean, var, 1.0 / (var + STANDARDIZE_EPS).sqrt())
        } else {
            (0.0, 0.0, 1.0)
        };
        let mut normalized = BatchVec::zeros(batch);
        let mut pre_act = BatchVec::zeros(batch);
        let mut output = BatchVec::zeros(batch);
        for b in 0..batch {
            let xh = (input.as_slice()[b] - mean) * inv_std;
            let a = self.scale[node] * xh + self.shift[node];
            normalized.as_mut_slice()[b] = xh;
            pre_act.as_mut_slice()[b] = a;
            output.as_mut_slice()[b] = self.activation.apply(a);
        }
        (
            output,
            NodeOpCache {
                normalized,
                inv_std,
                pre_act,
                batch_mean: mean,
                batch_var: var,
            },
        )
    }

    /// Evaluation-mode node op using running statistics.
    pub fn forward_eval(&self, node: NodeId, input: &BatchVec) -> BatchVec {
        let (mean, inv_std) = if self.standardize {
            (
                self.running_mean[node],
                1.0 / (self.running_var[node] + STANDARDIZE_EPS).sqrt(),
            )
        } else {
            (0.0, 1.0)
        };
        let mut output = BatchVec::zeros(input.len());
        for b in 0..input.len() {
            let xh = (input.as_slice()[b] - mean) * inv_std;
            output.as_mut_slice()[b] = self
                .activation
                .apply(self.scale[node] * xh + self.shift[node]);
        }
        output
    }

    /// Reverse of [`forward_train`]: folds the upstream gradient through the
    /// activation, the affine pair, and the batch statistics.
    pub fn backward(&self, node: NodeId, upstream: &BatchVec, cache: &NodeOpCache) -> NodeOpGrad {
        let batch = upstream.len();
        let mut d_pre = BatchVec::zeros(batch);
        for b in 0..batch {
            d_pre.as_mut_slice()[b] =
                upstream.as_slice()[b] * self.activation.derivative(cache.pre_act.as_slice()[b]);
        }
        let d_scale = d_pre.dot(&cache.normalized);
        let d_shift = d_pre.sum();

        let gamma = self.scale[node];
        let mut d_input = BatchVec::zeros(batch);
        if self.standardize {
            // d_norm = gamma * d_pre; fold back through mean/var.
            let mut sum_dnorm = 0.0;
            let mut sum_dnorm_xhat = 0.0;
            for b in 0..batch {
                let dn = gamma * d_pre.as_slice()[b];
                sum_dnorm += dn;
                sum_dnorm_xhat += dn * cache.normalized.as_slice()[b];
            }
            let nb = batch as f64;
            for b in 0..batch {
                let dn = gamma * d_pre.as_slice()[b];
                d_input.as_mut_slice()[b] = cache.inv_std / nb
                    * (nb * dn - sum_dnorm - cache.normalized.as_slice()[b] * sum_dnorm_xhat);
            }
        } else {
            for b in 0..batch {
                d_input.as_mut_slice()[b] = gamma * d_pre.as_slice()[b];
            }
        }
        NodeOpGrad {
            d_input,
            d_scale,
            d_shift,
        }
    }

    /// Folds one batch's statistics into the running estimates.
    pub fn update_running_stats(&mut self, node: NodeId, cache: &NodeOpCache) {
        if !self.standardize {
            return;
        }
        self.running_mean[node] =
            RUNNING_MOMENTUM * self.running_mean[node] + (1.0 - RUNNING_MOMENTUM) * cache.batch_mean;
        self.running_var[node] =
            RUNNING_MOMENTUM * self.running_var[node] + (1.0 - RUNNING_MOMENTUM) * cache.batch_var;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphTopology;
    use crate::numerics::{finite_difference_gradient, grad_error, Rng};

    #[test]
    fn standardized_batch_has_zero_mean_unit_scale() {
        let topo = GraphTopology::new(&[1, 1, 1], false).unwrap();
        let params = NodeParams::new(&topo, Activation::Identity, true);
        let input = BatchVec::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let (out, cache) = params.forward_train(1, &input);
        assert!(out.mean().abs() < 1e-12);
        assert!((cache.batch_mean - 2.5).abs() < 1e-12);
        let var_expected = 1.25; // biased variance of 1..4
        assert!((cache.batch_var - var_expected).abs() < 1e-12);
    }

    #[test]
    fn disabled_standardization_is_plain_affine() {
        let topo = GraphTopology::new(&[1, 1, 1], false).unwrap();
        let mut params = NodeParams::new(&topo, Activation::Identity, false);
        params.scale[1] = 2.0;
        params.shift[1] = -1.0;
        let input = BatchVec::from_vec(vec![0.5, -0.5]);
        let (out, _) = params.forward_train(1, &input);
        assert_eq!(out.as_slice(), &[0.0, -2.0]);
    }

    #[test]
    fn node_op_backward_matches_finite_differences() {
        let topo = GraphTopology::new(&[1, 1, 1], false).unwrap();
        let mut rng = Rng::new(5);
        for &standardize in &[true, false] {
            let mut params = NodeParams::new(&topo, Activation::Tanh, standardize);
            params.scale[1] = 1.3;
            params.shift[1] = -0.2;
            let batch = 5;
            let x: Vec<f64> = (0..batch).map(|_| rng.uniform(-2.0, 2.0).unwrap()).collect();
            // Loss: sum of outputs, so upstream gradient is all ones.
            let loss = |x: &[f64]| {
                let (out, _) = params.forward_train(1, &BatchVec::from_vec(x.to_vec()));
                out.sum()
            };
            let fd = finite_difference_gradient(loss, &x, 1e-5).unwrap();
            let (_, cache) = params.forward_train(1, &BatchVec::from_vec(x.clone()));
            let ones = BatchVec::from_vec(vec![1.0; batch]);
            let grad = params.backward(1, &ones, &cache);
            for b in 0..batch {
                assert!(
                    grad_error(grad.d_input.as_slice()[b], fd[b]) < 1e-7,
                    "standardize={standardize} b={b}"
                );
            }
            // scale/shift gradients against finite differences too.
            let base_scale = params.scale[1];
            let fd_scale = finite_difference_gradient(
                |s| {
                    let mut p = params.clone();
                    p.scale[1] = s[0];
                    p.forward_train(1, &BatchVec::from_vec(x.clone())).0.sum()
                },
                &[base_scale],
                1e-5,
            )
            .unwrap()[0];
            assert!(grad_error(grad.d_scale, fd_scale) < 1e-7);
        }
    }

    #[test]
    fn running_stats_blend_toward_batch() {
        let topo = GraphTopology::new(&[1, 1, 1], false).unwrap();
        let mut params = NodeParams::new(&topo, Activation::Relu, true);
        let input = BatchVec::from_vec(vec![2.0, 2.0, 2.0, 2.0]);
        let (_, cache) = params.forward_train(1, &input);
        params.update_running_stats(1, &cache);
        assert!((params.running_mean[1] - 0.2).abs() < 1e-12);
        assert!((params.running_var[1] - 0.9).abs() < 1e-12);
    }
}
