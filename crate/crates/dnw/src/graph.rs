//! Static neural-graph structure: nodes partitioned into ordered blocks, the
//! candidate-edge universe, reachability analysis, and edge-budget
//! accounting.
//!
//! Candidate edges run only from earlier blocks to later blocks, so every
//! graph here is a DAG and node index order is already a topological order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Rng};
use crate::params::NodeParams;
use crate::store::EdgeStore;

pub type NodeId = usize;

/// JSON-loadable graph description.
///
/// `{"blocks":[...], "k":int, "activation":"relu|tanh|identity", "seed":int}`
/// plus two optional keys: `standardize` (default true) switches the
/// batch-standardization half of the node op, and `adjacent_only`
/// (default false) restricts candidate edges to consecutive blocks.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphSpec {
    pub blocks: Vec<usize>,
    pub k: usize,
    pub activation: Activation,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub adjacent_only: bool,
}

fn default_true() -> bool {
    true
}

/// Immutable node/block layout of a graph.
///
/// Nodes are numbered so that `u < v` implies `block(u) <= block(v)`. The
/// first block is the input node set and the last block is the output node
/// set.
#[derive(Debug, Clone)]
pub struct GraphTopology {
    block_sizes: Vec<usize>,
    /// block_starts[i] is the first node id of block i; one extra entry
    /// holds the total node count.
    block_starts: Vec<usize>,
    /// block id per node.
    node_block: Vec<usize>,
    adjacent_only: bool,
}

impl GraphTopology {
    pub fn new(block_sizes: &[usize], adjacent_only: bool) -> Result<Self> {
        if block_sizes.len() < 2 {
            return Err(Error::contract("a graph needs at least 2 blocks"));
        }
        if block_sizes.iter().any(|&s| s == 0) {
            return Err(Error::contract("every block must be nonempty"));
        }
        let mut block_starts = Vec::with_capacity(block_sizes.len() + 1);
        let mut node_block = Vec::new();
        let mut start = 0;
        for (i, &size) in block_sizes.iter().enumerate() {
            block_starts.push(start);
            node_block.extend(std::iter::repeat(i).take(size));
            start += size;
        }
        block_starts.push(start);
        Ok(GraphTopology {
            block_sizes: block_sizes.to_vec(),
            block_starts,
            node_block,
            adjacent_only,
        })
    }

    pub fn num_nodes(&self) -> usize {
        *self.block_starts.last().unwrap()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn block_of(&self, node: NodeId) -> usize {
        self.node_block[node]
    }

    pub fn block_nodes(&self, block: usize) -> std::ops::Range<NodeId> {
        self.block_starts[block]..self.block_starts[block + 1]
    }

    pub fn input_nodes(&self) -> std::ops::Range<NodeId> {
        self.block_nodes(0)
    }

    pub fn output_nodes(&self) -> std::ops::Range<NodeId> {
        self.block_nodes(self.num_blocks() - 1)
    }

    pub fn is_input(&self, node: NodeId) -> bool {
        self.block_of(node) == 0
    }

    pub fn is_output(&self, node: NodeId) -> bool {
        self.block_of(node) == self.num_blocks() - 1
    }

    /// Whether (u, v) is a legal candidate pair.
    pub fn is_candidate(&self, u: NodeId, v: NodeId) -> bool {
        let (bu, bv) = (self.block_of(u), self.block_of(v));
        if self.adjacent_only {
            bv == bu + 1
        } else {
            bu < bv
        }
    }

    /// All candidate pairs in ascending lexicographic (u, v) order.
    pub fn candidate_pairs(&self) -> Vec<(NodeId, NodeId)> {
        let n = self.num_nodes();
        let mut pairs = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if self.is_candidate(u, v) {
                    pairs.push((u, v));
                }
            }
        }
        pairs
    }

    pub fn num_candidates(&self) -> usize {
        let mut total = 0;
        for i in 0..self.num_blocks() {
            for j in (i + 1)..self.num_blocks() {
                if !self.adjacent_only || j == i + 1 {
                    total += self.block_sizes[i] * self.block_sizes[j];
                }
            }
        }
        total
    }

    /// Candidate in-degree of a node: how many sources could feed it if the
    /// graph were complete. Init scales derive from this.
    pub fn candidate_in_degree(&self, node: NodeId) -> usize {
        let b = self.block_of(node);
        if b == 0 {
            return 0;
        }
        if self.adjacent_only {
            self.block_sizes[b - 1]
        } else {
            self.block_sizes[..b].iter().sum()
        }
    }
}

/// Nodes in evaluation order: every candidate edge points forward.
///
/// Node numbering already respects blocks, so this is the identity
/// permutation; it exists to make the evaluation-order contract explicit.
pub fn topological_order(topology: &GraphTopology) -> Vec<NodeId> {
    (0..topology.num_nodes()).collect()
}

/// Non-input, non-output nodes lacking a path from the inputs or a path to
/// the outputs under `edges` (given as (u, v) pairs). Dead nodes cannot
/// influence the network output.
pub fn dead_nodes(topology: &GraphTopology, edges: &[(NodeId, NodeId)]) -> Vec<NodeId> {
    let n = topology.num_nodes();
    let from_input = reachable_from_input(topology, edges);
    let to_output = reaches_output(topology, edges);
    (0..n)
        .filter(|&v| {
            !topology.is_input(v) && !topology.is_output(v) && !(from_input[v] && to_output[v])
        })
        .collect()
}

/// Nodes with a path from the input set (inputs included).
pub fn reachable_from_input(topology: &GraphTopology, edges: &[(NodeId, NodeId)]) -> Vec<bool> {
    let mut from_input = vec![false; topology.num_nodes()];
    for v in topology.input_nodes() {
        from_input[v] = true;
    }
    // Edges only point forward, so one ordered sweep settles reachability.
    for &(u, v) in edges {
        if from_input[u] {
            from_input[v] = true;
        }
    }
    from_input
}

/// Nodes with a path to the output set (outputs included). The forward pass
/// skips the others: their state is unobservable, so it is defined as zero
/// and their node op never runs.
pub fn reaches_output(topology: &GraphTopology, edges: &[(NodeId, NodeId)]) -> Vec<bool> {
    let mut to_output = vec![false; topology.num_nodes()];
    for v in topology.output_nodes() {
        to_output[v] = true;
    }
    for &(u, v) in edges.iter().rev() {
        if to_output[v] {
            to_output[u] = true;
        }
    }
    to_output
}

/// Edge budget of one complete bipartite stage under a width multiplier:
/// round(c_in * d) * round(c_out * d).
pub fn edge_budget(channels_in: usize, channels_out: usize, width_mult: f64) -> usize {
    let cin = (channels_in as f64 * width_mult).round() as usize;
    let cout = (channels_out as f64 * width_mult).round() as usize;
    cin * cout
}

/// Builds a graph from its spec: topology, uniformly initialized candidate
/// edge weights, and default node parameters.
///
/// Weights draw i.i.d. uniform on a single symmetric interval in ascending
/// (u, v) order from `spec.seed`, so two builds from the same spec are
/// identical and the initial top-k selection is an unbiased random subset
/// of the candidate pairs.
pub fn build_graph(spec: &GraphSpec) -> Result<(GraphTopology, EdgeStore, NodeParams)> {
    let topology = GraphTopology::new(&spec.blocks, spec.adjacent_only)?;
    let available = topology.num_candidates();
    if spec.k > available {
        return Err(Error::Budget {
            requested: spec.k,
            available,
        });
    }
    let mut rng = Rng::new(spec.seed);
    let store = EdgeStore::init_uniform(&topology, spec.k, &mut rng)?;
    let params = NodeParams::new(&topology, spec.activation, spec.standardize);
    Ok((topology, store, params))
}
