//! Typed message-passing cost model over joint operator-resource graphs.
//!
//! Every node type has an encoder MLP and an update MLP. States flow in three
//! phases: placed operators into their hosts, hosts back into their
//! operators, then along the dataflow in topological order. The sum of all
//! final states goes through a readout MLP.

pub mod loss;
pub mod tape;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{encode_with_schema, FeatureSchema, NodeRef, NodeType, NormalizationStats, SCHEMA_VERSION};
use crate::graph::{JointGraph, Metric};
use crate::optimize::CostPredictor;
use tape::{sigmoid, Tape, Var};

pub const FORMAT_VERSION: u32 = 1;

/// Floor applied to decoded regression outputs so they stay strictly positive.
pub const MIN_PREDICTION: f64 = 1e-6;

/// Graphs per forward pass at inference time.
const INFERENCE_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Binary,
}

impl TaskKind {
    pub fn for_metric(metric: Metric) -> TaskKind {
        if metric.is_binary() {
            TaskKind::Binary
        } else {
            TaskKind::Regression
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Three typed phases: operators to hosts, hosts to operators, dataflow.
    #[default]
    Novel,
    /// Three synchronous rounds over all edges, regardless of node type.
    Traditional,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Featurization {
    #[default]
    Full,
    /// Hosts and placement edges are kept but host features are zeroed.
    NoHardware,
    /// Hosts are omitted entirely.
    OpsOnly,
}

impl Scheme {
    pub fn parse(s: &str) -> Option<Scheme> {
        match s {
            "novel" => Some(Scheme::Novel),
            "traditional" => Some(Scheme::Traditional),
            _ => None,
        }
    }
}

impl Featurization {
    pub fn parse(s: &str) -> Option<Featurization> {
        match s {
            "full" => Some(Featurization::Full),
            "no-hardware" | "no_hardware" => Some(Featurization::NoHardware),
            "ops-only" | "ops_only" => Some(Featurization::OpsOnly),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `in x out`.
    pub weight: Array2<f64>,
    /// `1 x out`.
    pub bias: Array2<f64>,
}

/// Dense network with ReLU between layers and an identity output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// He-initialized network with zero biases.
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .map(|d| {
                let std = (2.0 / d[0] as f64).sqrt();
                let weight = Array2::from_shape_fn((d[0], d[1]), |_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * std
                });
                Layer { weight, bias: Array2::zeros((1, d[1])) }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.nrows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.ncols())
    }

    /// Forward pass for a single input row, without recording gradients.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut h = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.weight) + &l.bias;
            if i + 1 < self.layers.len() {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h.into_raw_vec_and_offset().0
    }

    fn check(&self, name: &str, input: usize, output: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::DimensionMismatch(format!("{name}: network has no layers")));
        }
        let mut dim = input;
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.nrows() != dim || l.bias.dim() != (1, l.weight.ncols()) {
                return Err(Error::DimensionMismatch(format!(
                    "{name} layer {i}: expected {dim} inputs, weight is {:?}, bias is {:?}",
                    l.weight.dim(),
                    l.bias.dim()
                )));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("{name} layer {i} holds non-finite values")));
            }
            dim = l.weight.ncols();
        }
        if dim != output {
            return Err(Error::DimensionMismatch(format!("{name}: output {dim}, expected {output}")));
        }
        Ok(())
    }
}

/// Architecture and tags of a model before training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub metric: Metric,
    pub scheme: Scheme,
    pub featurization: Featurization,
}

impl ModelConfig {
    pub fn new(metric: Metric) -> Self {
        ModelConfig { hidden_dim: 64, metric, scheme: Scheme::Novel, featurization: Featurization::Full }
    }
}

/// A complete, self-describing trained (or freshly initialized) model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub hidden_dim: usize,
    pub metric: Metric,
    pub task: TaskKind,
    pub scheme: Scheme,
    pub featurization: Featurization,
    pub seed: u64,
    pub schema: FeatureSchema,
    pub stats: NormalizationStats,
    pub encoders: BTreeMap<NodeType, Mlp>,
    pub updates: BTreeMap<NodeType, Mlp>,
    pub readout: Mlp,
}

/// A joint graph turned into encoder inputs and index structure.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedGraph {
    pub op_types: Vec<NodeType>,
    pub op_features: Vec<Vec<f64>>,
    /// Empty when hosts are omitted.
    pub host_features: Vec<Vec<f64>>,
    pub preds: Vec<Vec<usize>>,
    pub host_of: Vec<usize>,
    pub hosted: Vec<Vec<usize>>,
    /// Longest dataflow distance from a source.
    pub level: Vec<usize>,
}

/// Tape handles of every parameter, in [`ModelCheckpoint::params`] order.
struct ParamVars {
    encoders: BTreeMap<NodeType, Vec<(Var, Var)>>,
    updates: BTreeMap<NodeType, Vec<(Var, Var)>>,
    readout: Vec<(Var, Var)>,
    all: Vec<Var>,
}

/// Where a node's current state lives on the tape.
type Loc = (Var, usize);

impl ModelCheckpoint {
    pub fn init(cfg: &ModelConfig, stats: NormalizationStats, seed: u64) -> Result<Self> {
        if cfg.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        let schema = FeatureSchema::current();
        if stats.schema_version != schema.version {
            return Err(Error::SchemaMismatch(format!(
                "statistics fitted for schema {}, model uses {}",
                stats.schema_version, schema.version
            )));
        }
        let h = cfg.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoders = BTreeMap::new();
        let mut updates = BTreeMap::new();
        for t in NodeType::ALL {
            encoders.insert(t, Mlp::new(&[schema.width(t), h, h], &mut rng));
        }
        for t in NodeType::ALL {
            updates.insert(t, Mlp::new(&[2 * h, h, h], &mut rng));
        }
        let readout = Mlp::new(&[h, h, 1], &mut rng);
        Ok(ModelCheckpoint {
            format_version: FORMAT_VERSION,
            hidden_dim: h,
            metric: cfg.metric,
            task: TaskKind::for_metric(cfg.metric),
            scheme: cfg.scheme,
            featurization: cfg.featurization,
            seed,
            schema,
            stats,
            encoders,
            updates,
            readout,
        })
    }

    /// Structural validation applied on load.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.schema != FeatureSchema::current() || self.stats.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "checkpoint schema version {} does not match current schema {SCHEMA_VERSION}",
                self.schema.version
            )));
        }
        if self.task != TaskKind::for_metric(self.metric) {
            return Err(Error::Checkpoint(format!("task {:?} is inconsistent with metric {}", self.task, self.metric)));
        }
        let h = self.hidden_dim;
        for t in NodeType::ALL {
            let enc = self.encoders.get(&t).ok_or_else(|| Error::Checkpoint(format!("missing {t} encoder")))?;
            enc.check(&format!("{t} encoder"), self.schema.width(t), h)?;
            let upd = self.updates.get(&t).ok_or_else(|| Error::Checkpoint(format!("missing {t} update")))?;
            upd.check(&format!("{t} update"), 2 * h, h)?;
        }
        self.readout.check("readout", h, 1)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: ModelCheckpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("checkpoint serializes");
        format!("{:x}", Sha256::digest(bytes))
    }

    /// Every parameter matrix in a fixed order: encoders, updates (both by
    /// node type), readout; weight before bias.
    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        for mlp in self.encoders.values().chain(self.updates.values()).chain([&self.readout]) {
            for l in &mlp.layers {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for mlp in self.encoders.values_mut().chain(self.updates.values_mut()).chain([&mut self.readout]) {
            for l in &mut mlp.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    pub fn encode(&self, g: &JointGraph) -> Result<EncodedGraph> {
        let ops = g.operators();
        let mut op_types = Vec::with_capacity(ops.len());
        let mut op_features = Vec::with_capacity(ops.len());
        for op in ops {
            op_types.push(NodeType::from(op.kind()));
            op_features.push(encode_with_schema(NodeRef::Operator(op), &self.stats, &self.schema)?);
        }
        let host_features = match self.featurization {
            Featurization::Full => g
                .hosts()
                .iter()
                .map(|h| encode_with_schema(NodeRef::Hardware(h), &self.stats, &self.schema))
                .collect::<Result<Vec<_>>>()?,
            Featurization::NoHardware => vec![vec![0.0; self.schema.width(NodeType::Host)]; g.hosts().len()],
            Featurization::OpsOnly => Vec::new(),
        };
        let preds: Vec<Vec<usize>> = (0..ops.len()).map(|i| g.predecessors(i).to_vec()).collect();
        let mut level = vec![0usize; ops.len()];
        for i in 0..ops.len() {
            level[i] = preds[i].iter().map(|&p| level[p] + 1).max().unwrap_or(0);
        }
        Ok(EncodedGraph {
            op_types,
            op_features,
            host_features,
            preds,
            host_of: (0..ops.len()).map(|i| g.host_of(i)).collect(),
            hosted: (0..g.hosts().len()).map(|h| g.operators_on(h).to_vec()).collect(),
            level,
        })
    }

    fn param_vars(&self, tape: &mut Tape, needs_grad: bool) -> ParamVars {
        let mut all = Vec::new();
        let mut record = |mlp: &Mlp, tape: &mut Tape| -> Vec<(Var, Var)> {
            mlp.layers
                .iter()
                .map(|l| {
                    let w = tape.leaf(l.weight.clone(), needs_grad);
                    let b = tape.leaf(l.bias.clone(), needs_grad);
                    all.push(w);
                    all.push(b);
                    (w, b)
                })
                .collect()
        };
        let encoders = self.encoders.iter().map(|(t, m)| (*t, record(m, tape))).collect();
        let updates = self.updates.iter().map(|(t, m)| (*t, record(m, tape))).collect();
        let readout = record(&self.readout, tape);
        ParamVars { encoders, updates, readout, all }
    }

    /// Records the forward pass of a batch; returns the `n x 1` raw outputs
    /// (log1p-space values or logits).
    fn forward_tape(&self, tape: &mut Tape, pv: &ParamVars, batch: &[&EncodedGraph]) -> Var {
        let h = self.hidden_dim;
        // global node ids: operators of every graph, then hosts of every graph
        let mut op_base = Vec::with_capacity(batch.len());
        let mut n_ops = 0;
        for g in batch {
            op_base.push(n_ops);
            n_ops += g.op_types.len();
        }
        let mut host_base = Vec::with_capacity(batch.len());
        let mut n_hosts = 0;
        for g in batch {
            host_base.push(n_ops + n_hosts);
            n_hosts += g.host_features.len();
        }
        let mut loc: Vec<Loc> = vec![(0, 0); n_ops + n_hosts];

        // encode, one matrix per node type
        for t in NodeType::ALL {
            let mut ids = Vec::new();
            let mut rows: Vec<&[f64]> = Vec::new();
            for (gi, g) in batch.iter().enumerate() {
                if t == NodeType::Host {
                    for (j, x) in g.host_features.iter().enumerate() {
                        ids.push(host_base[gi] + j);
                        rows.push(x);
                    }
                } else {
                    for (j, x) in g.op_features.iter().enumerate() {
                        if g.op_types[j] == t {
                            ids.push(op_base[gi] + j);
                            rows.push(x);
                        }
                    }
                }
            }
            if ids.is_empty() {
                continue;
            }
            let width = rows[0].len();
            let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
            let x = tape.leaf(Array2::from_shape_vec((ids.len(), width), flat).expect("rows of equal width"), false);
            let out = mlp_on_tape(tape, &pv.encoders[&t], x);
            for (r, id) in ids.into_iter().enumerate() {
                loc[id] = (out, r);
            }
        }

        // (receiver id, receiver type, sender ids)
        type Update = (usize, NodeType, Vec<usize>);
        let apply = |tape: &mut Tape, loc: &mut Vec<Loc>, updates: Vec<Update>| {
            let snapshot = loc.clone();
            for t in NodeType::ALL {
                let group: Vec<&Update> = updates.iter().filter(|u| u.1 == t).collect();
                if group.is_empty() {
                    continue;
                }
                let agg = tape.gather(h, group.iter().map(|u| u.2.iter().map(|&s| snapshot[s]).collect()).collect());
                let own = tape.gather(h, group.iter().map(|u| vec![snapshot[u.0]]).collect());
                let input = tape.concat(agg, own);
                let out = mlp_on_tape(tape, &pv.updates[&t], input);
                for (r, u) in group.iter().enumerate() {
                    loc[u.0] = (out, r);
                }
            }
        };

        let hosts_present = n_hosts > 0;
        match self.scheme {
            Scheme::Novel => {
                if hosts_present {
                    // phase 1: placed operators inform their hosts
                    let mut ups = Vec::new();
                    for (gi, g) in batch.iter().enumerate() {
                        for (j, placed) in g.hosted.iter().enumerate() {
                            if !placed.is_empty() {
                                let senders = placed.iter().map(|&o| op_base[gi] + o).collect();
                                ups.push((host_base[gi] + j, NodeType::Host, senders));
                            }
                        }
                    }
                    apply(tape, &mut loc, ups);
                    // phase 2: hosts inform their operators
                    let mut ups = Vec::new();
                    for (gi, g) in batch.iter().enumerate() {
                        for (j, &t) in g.op_types.iter().enumerate() {
                            ups.push((op_base[gi] + j, t, vec![host_base[gi] + g.host_of[j]]));
                        }
                    }
                    apply(tape, &mut loc, ups);
                }
                // phase 3: along the dataflow, one topological level at a time
                let max_level = batch.iter().flat_map(|g| g.level.iter().copied()).max().unwrap_or(0);
                for lvl in 1..=max_level {
                    let mut ups = Vec::new();
                    for (gi, g) in batch.iter().enumerate() {
                        for (j, &t) in g.op_types.iter().enumerate() {
                            if g.level[j] == lvl {
                                let senders = g.preds[j].iter().map(|&p| op_base[gi] + p).collect();
                                ups.push((op_base[gi] + j, t, senders));
                            }
                        }
                    }
                    apply(tape, &mut loc, ups);
                }
            }
            Scheme::Traditional => {
                for _ in 0..3 {
                    let mut ups = Vec::new();
                    for (gi, g) in batch.iter().enumerate() {
                        for (j, &t) in g.op_types.iter().enumerate() {
                            let mut senders: Vec<usize> = g.preds[j].iter().map(|&p| op_base[gi] + p).collect();
                            if hosts_present {
                                senders.push(host_base[gi] + g.host_of[j]);
                            }
                            ups.push((op_base[gi] + j, t, senders));
                        }
                        for (j, placed) in g.hosted.iter().enumerate().take(g.host_features.len()) {
                            let senders = placed.iter().map(|&o| op_base[gi] + o).collect();
                            ups.push((host_base[gi] + j, NodeType::Host, senders));
                        }
                    }
                    apply(tape, &mut loc, ups);
                }
            }
        }

        // readout over the sum of all final states of each graph
        let groups: Vec<Vec<Loc>> = batch
            .iter()
            .enumerate()
            .map(|(gi, g)| {
                let ops = (0..g.op_types.len()).map(|j| loc[op_base[gi] + j]);
                let hosts = (0..g.host_features.len()).map(|j| loc[host_base[gi] + j]);
                ops.chain(hosts).collect()
            })
            .collect();
        let pooled = tape.gather(h, groups);
        mlp_on_tape(tape, &pv.readout, pooled)
    }

    /// Raw outputs (log1p-space values or logits) for encoded graphs.
    pub fn predict_raw(&self, graphs: &[EncodedGraph]) -> Vec<f64> {
        let mut out = Vec::with_capacity(graphs.len());
        for chunk in graphs.chunks(INFERENCE_BATCH) {
            let mut tape = Tape::new();
            let pv = self.param_vars(&mut tape, false);
            let refs: Vec<&EncodedGraph> = chunk.iter().collect();
            let y = self.forward_tape(&mut tape, &pv, &refs);
            out.extend(tape.value(y).column(0).iter().copied());
        }
        out
    }

    /// Maps a raw output to a cost value (regression) or probability (binary).
    pub fn decode(&self, raw: f64) -> f64 {
        match self.task {
            TaskKind::Regression => raw.exp_m1().max(MIN_PREDICTION),
            TaskKind::Binary => sigmoid(raw),
        }
    }

    /// Training target in raw-output space.
    pub fn target_of(&self, label: f64) -> f64 {
        match self.task {
            TaskKind::Regression => label.ln_1p(),
            TaskKind::Binary => label,
        }
    }

    /// Batch loss (MSLE for regression, cross-entropy for binary) and the
    /// gradient of every parameter, in [`Self::params`] order.
    pub fn loss_and_grads(&self, batch: &[&EncodedGraph], labels: &[f64]) -> (f64, Vec<Array2<f64>>) {
        self.weighted_loss_and_grads(batch, labels, None)
    }

    /// As [`Self::loss_and_grads`]; binary losses weight each example by the
    /// weight of its class. Ignored for regression.
    pub fn weighted_loss_and_grads(
        &self,
        batch: &[&EncodedGraph],
        labels: &[f64],
        class_weights: Option<ClassWeights>,
    ) -> (f64, Vec<Array2<f64>>) {
        let mut tape = Tape::new();
        let pv = self.param_vars(&mut tape, true);
        let y = self.forward_tape(&mut tape, &pv, batch);
        let loss = self.loss_on_tape(&mut tape, y, labels, class_weights);
        let value = tape.value(loss)[[0, 0]];
        let mut grads = tape.backward(loss);
        let params = self.params();
        let out = pv
            .all
            .iter()
            .zip(params)
            .map(|(&v, p)| grads[v].take().unwrap_or_else(|| Array2::zeros(p.raw_dim())))
            .collect();
        (value, out)
    }

    /// Batch loss without gradients.
    pub fn loss(&self, batch: &[&EncodedGraph], labels: &[f64]) -> f64 {
        self.weighted_loss(batch, labels, None)
    }

    pub fn weighted_loss(&self, batch: &[&EncodedGraph], labels: &[f64], class_weights: Option<ClassWeights>) -> f64 {
        let mut tape = Tape::new();
        let pv = self.param_vars(&mut tape, false);
        let y = self.forward_tape(&mut tape, &pv, batch);
        let loss = self.loss_on_tape(&mut tape, y, labels, class_weights);
        tape.value(loss)[[0, 0]]
    }

    fn loss_on_tape(&self, tape: &mut Tape, y: Var, labels: &[f64], class_weights: Option<ClassWeights>) -> Var {
        let targets: Vec<f64> = labels.iter().map(|&l| self.target_of(l)).collect();
        match (self.task, class_weights) {
            (TaskKind::Regression, _) => tape.squared_error(y, targets),
            (TaskKind::Binary, None) => tape.bce(y, targets),
            (TaskKind::Binary, Some(cw)) => {
                let weights = targets.iter().map(|&t| cw.of(t >= 0.5)).collect();
                tape.weighted_bce(y, targets, weights)
            }
        }
    }
}

/// Per-class loss weights for binary tasks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl ClassWeights {
    /// Inverse-frequency weights that give both classes equal total weight
    /// and average 1 over `labels`. `None` if a class is absent.
    pub fn balanced(labels: &[f64]) -> Option<ClassWeights> {
        let n = labels.len() as f64;
        let pos = labels.iter().filter(|&&l| l >= 0.5).count() as f64;
        let neg = n - pos;
        if pos == 0.0 || neg == 0.0 {
            return None;
        }
        Some(ClassWeights { positive: n / (2.0 * pos), negative: n / (2.0 * neg) })
    }

    pub fn of(&self, positive: bool) -> f64 {
        if positive {
            self.positive
        } else {
            self.negative
        }
    }
}

fn mlp_on_tape(tape: &mut Tape, layers: &[(Var, Var)], x: Var) -> Var {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let z = tape.matmul(h, w);
        h = tape.add_bias(z, b);
        if i + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    h
}

impl CostPredictor for ModelCheckpoint {
    fn metric(&self) -> Metric {
        self.metric
    }

    fn predict(&self, g: &JointGraph) -> Result<f64> {
        Ok(self.predict_batch(std::slice::from_ref(g))?[0])
    }

    fn predict_batch(&self, graphs: &[JointGraph]) -> Result<Vec<f64>> {
        let encoded = graphs.iter().map(|g| self.encode(g)).collect::<Result<Vec<_>>>()?;
        Ok(self.predict_raw(&encoded).into_iter().map(|r| self.decode(r)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::fit_stats;
    use crate::generate::{generate_item, GenConfig, Workload};

    fn graphs(n: u64) -> Vec<JointGraph> {
        (0..n).map(|i| generate_item(&GenConfig::default(), Workload::Mixed, i).unwrap().graph).collect()
    }

    fn model(metric: Metric, scheme: Scheme, featurization: Featurization, gs: &[JointGraph]) -> ModelCheckpoint {
        let cfg = ModelConfig { hidden_dim: 8, metric, scheme, featurization };
        let mut m = ModelCheckpoint::init(&cfg, fit_stats(gs.iter()).unwrap(), 5).unwrap();
        // non-zero biases so every path carries signal
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for b in m.params_mut().into_iter().skip(1).step_by(2) {
            b.mapv_inplace(|_| StandardNormal.sample(&mut rng));
        }
        m
    }

    fn add(a: &mut [f64], b: &[f64]) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }

    fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().chain(b).copied().collect()
    }

    /// Node-at-a-time forward pass of the three-phase scheme.
    fn reference_forward(m: &ModelCheckpoint, e: &EncodedGraph) -> f64 {
        let h = m.hidden_dim;
        let mut ops: Vec<Vec<f64>> = e.op_features.iter().zip(&e.op_types).map(|(x, t)| m.encoders[t].apply(x)).collect();
        let mut hosts: Vec<Vec<f64>> = e.host_features.iter().map(|x| m.encoders[&NodeType::Host].apply(x)).collect();
        if !hosts.is_empty() {
            for (j, placed) in e.hosted.iter().enumerate() {
                let mut sum = vec![0.0; h];
                placed.iter().for_each(|&o| add(&mut sum, &ops[o]));
                hosts[j] = m.updates[&NodeType::Host].apply(&cat(&sum, &hosts[j]));
            }
            for (j, t) in e.op_types.iter().enumerate() {
                ops[j] = m.updates[t].apply(&cat(&hosts[e.host_of[j]], &ops[j]));
            }
        }
        let max_level = e.level.iter().copied().max().unwrap_or(0);
        for lvl in 1..=max_level {
            for (j, t) in e.op_types.iter().enumerate().filter(|(j, _)| e.level[*j] == lvl) {
                let mut sum = vec![0.0; h];
                e.preds[j].iter().for_each(|&p| add(&mut sum, &ops[p]));
                ops[j] = m.updates[t].apply(&cat(&sum, &ops[j]));
            }
        }
        let mut pooled = vec![0.0; h];
        ops.iter().chain(&hosts).for_each(|s| add(&mut pooled, s));
        m.readout.apply(&pooled)[0]
    }

    #[test]
    fn batched_forward_matches_the_reference() {
        let gs = graphs(12);
        for featurization in [Featurization::Full, Featurization::NoHardware, Featurization::OpsOnly] {
            let m = model(Metric::Throughput, Scheme::Novel, featurization, &gs);
            let encoded: Vec<EncodedGraph> = gs.iter().map(|g| m.encode(g).unwrap()).collect();
            let batched = m.predict_raw(&encoded);
            for (e, y) in encoded.iter().zip(&batched) {
                let r = reference_forward(&m, e);
                assert!((r - y).abs() <= 1e-9 * r.abs().max(1.0), "{featurization:?}: {r} vs {y}");
            }
        }
    }

    #[test]
    fn batch_composition_does_not_change_outputs() {
        let gs = graphs(9);
        for scheme in [Scheme::Novel, Scheme::Traditional] {
            let m = model(Metric::E2eLatency, scheme, Featurization::Full, &gs);
            let encoded: Vec<EncodedGraph> = gs.iter().map(|g| m.encode(g).unwrap()).collect();
            let together = m.predict_raw(&encoded);
            for (e, y) in encoded.iter().zip(&together) {
                assert_eq!(m.predict_raw(std::slice::from_ref(e))[0], *y);
            }
        }
    }

    #[test]
    fn featurizations_shape_the_encoding() {
        let gs = graphs(3);
        let full = model(Metric::Success, Scheme::Novel, Featurization::Full, &gs).encode(&gs[0]).unwrap();
        let blind = model(Metric::Success, Scheme::Novel, Featurization::NoHardware, &gs).encode(&gs[0]).unwrap();
        let ops_only = model(Metric::Success, Scheme::Novel, Featurization::OpsOnly, &gs).encode(&gs[0]).unwrap();
        assert_eq!(full.host_features.len(), gs[0].hosts().len());
        assert!(blind.host_features.iter().flatten().all(|&x| x == 0.0));
        assert!(ops_only.host_features.is_empty());
        assert_eq!(full.op_features, ops_only.op_features);
    }

    #[test]
    fn decode_and_targets() {
        let gs = graphs(2);
        let reg = model(Metric::Throughput, Scheme::Novel, Featurization::Full, &gs);
        assert!((reg.decode(reg.target_of(250.0)) - 250.0).abs() < 1e-9);
        assert_eq!(reg.decode(-50.0), MIN_PREDICTION);
        let bin = model(Metric::Success, Scheme::Novel, Featurization::Full, &gs);
        assert_eq!(bin.decode(0.0), 0.5);
        assert_eq!(bin.target_of(1.0), 1.0);
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let gs = graphs(4);
        let m = model(Metric::ProcLatency, Scheme::Traditional, Featurization::Full, &gs);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = ModelCheckpoint::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.content_hash(), m.content_hash());
        assert_eq!(back.predict_batch(&gs).unwrap(), m.predict_batch(&gs).unwrap());

        let mut broken = m.clone();
        broken.readout.layers[0].weight = Array2::zeros((3, 8));
        assert!(matches!(broken.validate(), Err(Error::DimensionMismatch(_))));
        let mut broken = m.clone();
        broken.format_version += 1;
        assert!(matches!(broken.validate(), Err(Error::Checkpoint(_))));
        let mut broken = m.clone();
        broken.task = TaskKind::Binary;
        assert!(broken.validate().is_err());
        let mut broken = m;
        broken.updates.remove(&NodeType::Join);
        assert!(broken.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_rejects_zero_width() {
        let gs = graphs(3);
        let stats = fit_stats(gs.iter()).unwrap();
        let cfg = ModelConfig { hidden_dim: 4, ..ModelConfig::new(Metric::Throughput) };
        let a = ModelCheckpoint::init(&cfg, stats.clone(), 1).unwrap();
        assert_eq!(a, ModelCheckpoint::init(&cfg, stats.clone(), 1).unwrap());
        assert_ne!(a, ModelCheckpoint::init(&cfg, stats.clone(), 2).unwrap());
        assert!(a.params().iter().skip(1).step_by(2).all(|b| b.iter().all(|&x| x == 0.0)));
        assert!(ModelCheckpoint::init(&ModelConfig { hidden_dim: 0, ..cfg }, stats, 1).is_err());
    }

    #[test]
    fn balanced_class_weights() {
        let w = ClassWeights::balanced(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!((w.positive, w.negative), (2.0, 2.0 / 3.0));
        assert_eq!(w.positive * 1.0 + w.negative * 3.0, 4.0);
        assert_eq!(ClassWeights::balanced(&[1.0, 1.0]), None);
    }
}
