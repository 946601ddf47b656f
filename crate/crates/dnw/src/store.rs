//! Candidate-edge storage and the top-k selection rule.
//!
//! The store holds every candidate pair's weight and momentum state; the
//! real edge set is always recomputed from scratch as the k pairs with
//! largest weight magnitude, with ties at the threshold broken by ascending
//! lexicographic (u, v) order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphTopology, NodeId};
use crate::numerics::Rng;

/// Weights and optimizer state for every candidate pair, plus the edge
/// budget k. Candidate pairs are stored in ascending (u, v) order and
/// addressed by index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeStore {
    pairs: Vec<(NodeId, NodeId)>,
    weights: Vec<f64>,
    velocities: Vec<f64>,
    k: usize,
}

/// Half-width of the uniform init interval, the same for every candidate
/// pair. A single scale keeps the initial top-k selection an unbiased
/// random subset of the pairs (per-node input scale differences are
/// absorbed by the node op's standardization); a fan-dependent scale would
/// systematically starve high-fan targets of initial edges.
pub const INIT_SCALE: f64 = 0.5;

impl EdgeStore {
    /// Store with all weights drawn i.i.d. uniform on
    /// (-INIT_SCALE, INIT_SCALE), in ascending pair order.
    pub fn init_uniform(topology: &GraphTopology, k: usize, rng: &mut Rng) -> Result<Self> {
        let pairs = topology.candidate_pairs();
        if k > pairs.len() {
            return Err(Error::Budget {
                requested: k,
                available: pairs.len(),
            });
        }
        let mut weights = Vec::with_capacity(pairs.len());
        for _ in 0..pairs.len() {
            weights.push(rng.uniform(-INIT_SCALE, INIT_SCALE)?);
        }
        let velocities = vec![0.0; pairs.len()];
        Ok(EdgeStore {
            pairs,
            weights,
            velocities,
            k,
        })
    }

    /// Store with explicitly provided weights (tests and embeddings).
    pub fn from_weights(
        topology: &GraphTopology,
        k: usize,
        assign: impl Fn(NodeId, NodeId) -> f64,
    ) -> Result<Self> {
        let pairs = topology.candidate_pairs();
        if k > pairs.len() {
            return Err(Error::Budget {
                requested: k,
                available: pairs.len(),
            });
        }
        let weights = pairs.iter().map(|&(u, v)| assign(u, v)).collect();
        let velocities = vec![0.0; pairs.len()];
        Ok(EdgeStore {
            pairs,
            weights,
            velocities,
            k,
        })
    }

    pub fn num_candidates(&self) -> usize {
        self.pairs.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn set_k(&mut self, k: usize) -> Result<()> {
        if k > self.pairs.len() {
            return Err(Error::Budget {
                requested: k,
                available: self.pairs.len(),
            });
        }
        self.k = k;
        Ok(())
    }

    pub fn pair(&self, idx: usize) -> (NodeId, NodeId) {
        self.pairs[idx]
    }

    pub fn pairs(&self) -> &[(NodeId, NodeId)] {
        &self.pairs
    }

    pub fn weight(&self, idx: usize) -> f64 {
        self.weights[idx]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn velocity(&self, idx: usize) -> f64 {
        self.velocities[idx]
    }

    pub fn set_weight(&mut self, idx: usize, w: f64) {
        self.weights[idx] = w;
    }

    pub fn set_velocity(&mut self, idx: usize, v: f64) {
        self.velocities[idx] = v;
    }

    /// Index of a candidate pair, if it exists.
    pub fn index_of(&self, u: NodeId, v: NodeId) -> Option<usize> {
        self.pairs.binary_search(&(u, v)).ok()
    }

    /// One SGD-with-momentum step on a single pair:
    /// velocity <- momentum * velocity + grad; weight <- weight - lr * velocity.
    pub fn apply_update(&mut self, idx: usize, grad: f64, lr: f64, momentum: f64) {
        self.velocities[idx] = momentum * self.velocities[idx] + grad;
        self.weights[idx] -= lr * self.velocities[idx];
    }
}

/// The real edge set: exactly k candidate indices, sorted ascending, plus
/// per-node incidence lists for forward/backward traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    indices: Vec<usize>,
    selected: Vec<bool>,
    /// in_edges[v] = (source u, candidate index), ascending u.
    in_edges: Vec<Vec<(NodeId, usize)>>,
    /// out_edges[u] = (target v, candidate index), ascending v.
    out_edges: Vec<Vec<(NodeId, usize)>>,
}

impl EdgeSet {
    pub fn from_indices(store: &EdgeStore, num_nodes: usize, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        let mut selected = vec![false; store.num_candidates()];
        let mut in_edges = vec![Vec::new(); num_nodes];
        let mut out_edges = vec![Vec::new(); num_nodes];
        for &idx in &indices {
            let (u, v) = store.pair(idx);
            selected[idx] = true;
            in_edges[v].push((u, idx));
            out_edges[u].push((v, idx));
        }
        // Pair order is lexicographic, so pushed order is already ascending
        // by (u) for in_edges and by (v) for out_edges.
        EdgeSet {
            indices,
            selected,
            in_edges,
            out_edges,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.selected[idx]
    }

    pub fn in_edges(&self, v: NodeId) -> &[(NodeId, usize)] {
        &self.in_edges[v]
    }

    pub fn out_edges(&self, u: NodeId) -> &[(NodeId, usize)] {
        &self.out_edges[u]
    }

    /// Selected pairs in ascending (u, v) order.
    pub fn pairs(&self, store: &EdgeStore) -> Vec<(NodeId, NodeId)> {
        self.indices.iter().map(|&i| store.pair(i)).collect()
    }

    /// The selection threshold: smallest |w| among selected edges, or +inf
    /// for an empty selection.
    pub fn threshold(&self, store: &EdgeStore) -> f64 {
        self.indices
            .iter()
            .map(|&i| store.weight(i).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Picks the k candidate pairs with largest |weight|.
///
/// Ties at the threshold break by ascending (u, v), i.e. ascending candidate
/// index, so selection is a pure function of (weights, k).
pub fn select_edges(store: &EdgeStore, num_nodes: usize) -> EdgeSet {
    let mut order: Vec<usize> = (0..store.num_candidates()).collect();
    order.sort_unstable_by(|&a, &b| {
        store
            .weight(b)
            .abs()
            .total_cmp(&store.weight(a).abs())
            .then(a.cmp(&b))
    });
    order.truncate(store.k());
    EdgeSet::from_indices(store, num_nodes, order)
}
