//! Learned cost model for placing streaming queries on heterogeneous hardware.
//!
//! The crate builds joint operator-resource graphs, labels them with an
//! analytic execution model, trains typed message-passing networks on them and
//! uses model ensembles to pick operator placements.

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod graph;
pub mod generate;
pub mod gnn;
pub mod optimize;
pub mod sim;
pub mod suite;
pub mod train;

pub use error::{Error, Result};
pub use features::{
    encode_node, fit_stats, FeatureSchema, NodeType, NormalizationStats, OperatorFeatures, WindowSpec,
};
pub use graph::{
    build_joint_graph, topological_order, validate_query, CostVector, Edge, HardwareNode, HostId,
    JointGraph, Metric, OpId, OperatorKind, OperatorNode, Placement, QueryGraph,
};
pub use sim::{simulate, SimConfig};
pub use train::{train_ensemble, train_model, TrainConfig};
pub use evaluate::{percentile, q_error, EvalReport};
