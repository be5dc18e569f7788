//! Fixed workloads shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use streamcost_core::features::fit_stats;
use streamcost_core::generate::{generate_item, sample_hardware, sample_query_of, GenConfig, QueryFamily, Workload};
use streamcost_core::gnn::{ModelCheckpoint, ModelConfig};
use streamcost_core::{HardwareNode, JointGraph, Metric, QueryGraph};

/// `n` placed queries from the default generator.
pub fn graphs(n: u64) -> Vec<JointGraph> {
    let cfg = GenConfig::default();
    (0..n).map(|i| generate_item(&cfg, Workload::Mixed, i).expect("default generator").graph).collect()
}

/// An untrained model with statistics fitted on `graphs`.
pub fn model(metric: Metric, hidden_dim: usize, graphs: &[JointGraph]) -> ModelCheckpoint {
    let cfg = ModelConfig { hidden_dim, ..ModelConfig::new(metric) };
    ModelCheckpoint::init(&cfg, fit_stats(graphs.iter()).expect("non-empty"), 1).expect("valid config")
}

/// A three-way join query with one host per operator.
pub fn large_query(seed: u64) -> (QueryGraph, Vec<HardwareNode>) {
    let cfg = GenConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = sample_query_of(&cfg, QueryFamily::ThreeWayJoin, &mut rng);
    let hw = sample_hardware(&cfg, q.operators.len(), &mut rng);
    (q, hw)
}
