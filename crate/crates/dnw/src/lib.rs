//! Neural graphs with learned sparse wiring.
//!
//! A neural graph keeps a weight for every candidate edge but runs its
//! forward pass over only the k largest-magnitude ones. The update rule
//! moves every candidate weight, so an unused edge that would help keeps
//! strengthening until it swaps into the active set. The crate provides:
//!
//! - the static-graph training engine and its straight-through
//!   reformulation ([`engine`], [`train`], [`st`])
//! - discrete- and continuous-time graph dynamics with a fixed-step RK4
//!   integrator ([`dynamic`])
//! - sparse training of dense layers by per-step top-k% magnitude masks
//!   ([`sparse`])
//! - wiring-discovery baselines: frozen random graphs, no-update-rule,
//!   L1 + anneal, one-shot pruning ([`baselines`])
//! - empirical checks of the swap and descent properties behind the update
//!   rule ([`verify`])
//! - datasets, experiment configs, metrics, and checkpoints ([`data`],
//!   [`harness`])
//!
//! All floating-point work is f64 with fixed summation orders, so runs are
//! reproducible bitwise given a seed. The `parallel` feature (on by
//! default) distributes independent runs and verification scenarios with
//! rayon; results are identical either way.

pub mod baselines;
pub mod data;
pub mod dynamic;
pub mod engine;
pub mod error;
pub mod graph;
pub mod harness;
pub mod numerics;
pub mod parallel;
pub mod params;
pub mod sparse;
pub mod st;
pub mod store;
pub mod train;
pub mod verify;

pub use engine::{backward, evaluate, forward, update_edges, IoMaps, Model};
pub use error::{Error, Result};
pub use graph::{build_graph, dead_nodes, edge_budget, topological_order, GraphSpec, GraphTopology};
pub use numerics::{Activation, BatchVec, Rng};
pub use params::NodeParams;
pub use store::{select_edges, EdgeSet, EdgeStore};
pub use train::{train, MetricsRecord, TrainConfig, TrainedModel};
