//! Flat-vector baseline: aggregate statistics of a placed query fed to
//! gradient-boosted trees. Which operator runs where is deliberately lost.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use gbdt::config::Config;
use gbdt::decision_tree::{Data, DataVec};
use gbdt::gradient_boost::GBDT;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{JointGraph, Metric, OperatorKind};
use crate::gnn::{TaskKind, MIN_PREDICTION};
use crate::optimize::CostPredictor;

pub const FLAT_VERSION: u32 = 1;

/// Slot names of [`flatten`], in order.
pub const FLAT_SLOTS: [&str; 27] = [
    "n_sources",
    "n_filters",
    "n_aggregations",
    "n_joins",
    "n_sinks",
    "selectivity_min",
    "selectivity_mean",
    "selectivity_max",
    "window_size_min",
    "window_size_mean",
    "window_size_max",
    "total_event_rate",
    "mean_source_width",
    "cpu_min",
    "cpu_mean",
    "cpu_max",
    "ram_min",
    "ram_mean",
    "ram_max",
    "bandwidth_min",
    "bandwidth_mean",
    "bandwidth_max",
    "latency_min",
    "latency_mean",
    "latency_max",
    "used_hosts",
    "max_colocation",
];

fn min_mean_max(values: &[f64]) -> [f64; 3] {
    if values.is_empty() {
        return [0.0; 3];
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [min, values.iter().sum::<f64>() / values.len() as f64, max]
}

/// Fixed-length aggregate description of a placed query.
pub fn flatten(g: &JointGraph) -> Vec<f64> {
    let ops = g.operators();
    let count = |k: OperatorKind| ops.iter().filter(|o| o.kind() == k).count() as f64;
    let sels: Vec<f64> = ops.iter().filter_map(|o| o.features.selectivity()).collect();
    let windows: Vec<f64> = ops.iter().filter_map(|o| o.features.window().map(|w| w.size)).collect();
    let sources: Vec<&crate::features::SourceFeatures> = ops
        .iter()
        .filter_map(|o| match &o.features {
            crate::features::OperatorFeatures::Source(s) => Some(s),
            _ => None,
        })
        .collect();
    let total_rate: f64 = sources.iter().map(|s| s.event_rate).sum();
    let mean_width = sources.iter().map(|s| s.data_types.len() as f64).sum::<f64>() / sources.len().max(1) as f64;

    let mut v = vec![
        count(OperatorKind::Source),
        count(OperatorKind::Filter),
        count(OperatorKind::WindowedAggregation),
        count(OperatorKind::WindowedJoin),
        count(OperatorKind::Sink),
    ];
    v.extend(min_mean_max(&sels));
    v.extend(min_mean_max(&windows));
    v.push(total_rate);
    v.push(mean_width);
    let hosts = g.hosts();
    for get in [
        |h: &crate::graph::HardwareNode| h.cpu,
        |h: &crate::graph::HardwareNode| h.ram,
        |h: &crate::graph::HardwareNode| h.net_bandwidth,
        |h: &crate::graph::HardwareNode| h.net_latency,
    ] {
        let values: Vec<f64> = hosts.iter().map(get).collect();
        v.extend(min_mean_max(&values));
    }
    v.push(hosts.len() as f64);
    v.push((0..hosts.len()).map(|h| g.operators_on(h).len()).max().unwrap_or(0) as f64);
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatConfig {
    pub iterations: usize,
    pub max_depth: u32,
    pub shrinkage: f32,
    pub min_leaf_size: usize,
}

impl Default for FlatConfig {
    fn default() -> Self {
        FlatConfig { iterations: 200, max_depth: 6, shrinkage: 0.1, min_leaf_size: 5 }
    }
}

#[derive(Serialize, Deserialize)]
pub struct FlatModel {
    pub version: u32,
    pub metric: Metric,
    pub task: TaskKind,
    pub config: FlatConfig,
    pub slots: Vec<String>,
    model: GBDT,
}

fn to_data(x: &[f64], label: f64) -> Data {
    Data::new_training_data(x.iter().map(|&v| v as f32).collect(), 1.0, label as f32, None)
}

/// Trains the tabular baseline for one metric. Regression targets are fitted
/// in log1p space; binary targets use a logistic loss.
pub fn train_flat(metric: Metric, train: &[(&JointGraph, f64)], cfg: &FlatConfig) -> Result<FlatModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let task = TaskKind::for_metric(metric);
    let mut conf = Config::new();
    conf.set_feature_size(FLAT_SLOTS.len());
    conf.set_max_depth(cfg.max_depth);
    conf.set_iterations(cfg.iterations);
    conf.set_shrinkage(cfg.shrinkage);
    conf.set_min_leaf_size(cfg.min_leaf_size);
    conf.set_debug(false);
    conf.set_loss(match task {
        TaskKind::Regression => "SquaredError",
        TaskKind::Binary => "LogLikelyhood",
    });
    let mut data: DataVec = train
        .iter()
        .map(|(g, y)| {
            let label = match task {
                TaskKind::Regression => y.ln_1p(),
                TaskKind::Binary if *y >= 0.5 => 1.0,
                TaskKind::Binary => -1.0,
            };
            to_data(&flatten(g), label)
        })
        .collect();
    let mut model = GBDT::new(&conf);
    model.fit(&mut data);
    Ok(FlatModel {
        version: FLAT_VERSION,
        metric,
        task,
        config: cfg.clone(),
        slots: FLAT_SLOTS.iter().map(|s| s.to_string()).collect(),
        model,
    })
}

impl std::fmt::Debug for FlatModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlatModel").field("metric", &self.metric).field("config", &self.config).finish_non_exhaustive()
    }
}

impl FlatModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: FlatModel = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.version != FLAT_VERSION || m.slots.len() != FLAT_SLOTS.len() || m.slots.iter().zip(FLAT_SLOTS).any(|(a, b)| a != b) {
            return Err(Error::SchemaMismatch(format!("flat model version {} does not match slot layout {FLAT_VERSION}", m.version)));
        }
        Ok(m)
    }

    /// Importance-free summary: slot name to value for one graph.
    pub fn describe(g: &JointGraph) -> BTreeMap<&'static str, f64> {
        FLAT_SLOTS.iter().copied().zip(flatten(g)).collect()
    }
}

impl CostPredictor for FlatModel {
    fn metric(&self) -> Metric {
        self.metric
    }

    fn predict(&self, g: &JointGraph) -> Result<f64> {
        Ok(self.predict_batch(std::slice::from_ref(g))?[0])
    }

    fn predict_batch(&self, graphs: &[JointGraph]) -> Result<Vec<f64>> {
        let data: DataVec = graphs
            .iter()
            .map(|g| Data::new_test_data(flatten(g).iter().map(|&v| v as f32).collect(), None))
            .collect();
        let raw = self.model.predict(&data);
        Ok(raw
            .into_iter()
            .map(|r| match self.task {
                TaskKind::Regression => (r as f64).exp_m1().max(MIN_PREDICTION),
                TaskKind::Binary => r as f64,
            })
            .collect())
    }
}
