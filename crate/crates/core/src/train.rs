//! Mini-batch training, validation-based model selection, ensembles and
//! fine-tuning.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::fit_stats;
use crate::gnn::{ClassWeights, EncodedGraph, Featurization, ModelCheckpoint, ModelConfig, Scheme, TaskKind};
use crate::graph::{JointGraph, Metric};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Maximum global gradient norm.
    pub clip_norm: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub scheme: Scheme,
    pub featurization: Featurization,
    /// Weight binary losses so both classes contribute equally.
    pub balance_classes: bool,
    /// Learning-rate multiplier applied when fine-tuning.
    pub fine_tune_lr_factor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Decoupled weight decay applied to every parameter each step.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 64,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            patience: 20,
            seeds: vec![1, 2, 3],
            scheme: Scheme::Novel,
            featurization: Featurization::Full,
            balance_classes: true,
            fine_tune_lr_factor: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("fine_tune_lr_factor", self.fine_tune_lr_factor),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("train.{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("train.weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.hidden_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.hidden_dim and train.batch_size must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("train.{name} must lie in [0, 1)")));
            }
        }
        if self.seeds.is_empty() || self.seeds.len() % 2 == 0 {
            return Err(Error::Config(format!("train.seeds must be an odd number of seeds, got {}", self.seeds.len())));
        }
        Ok(())
    }

    pub fn model_config(&self, metric: Metric) -> ModelConfig {
        ModelConfig { hidden_dim: self.hidden_dim, metric, scheme: self.scheme, featurization: self.featurization }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<EpochLog>,
    /// Epoch (1-based) whose weights were kept; 0 if none ran.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainOutcome {
    /// Training curve as CSV with a header row.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,wall_seconds\n");
        for e in &self.log {
            s.push_str(&format!("{},{},{},{:.3}\n", e.epoch, e.train_loss, e.val_loss, e.wall_seconds));
        }
        s
    }
}

/// A labeled graph; the label is the raw cost value or 0/1.
pub type Sample<'a> = (&'a JointGraph, f64);

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    fn new(params: &[&Array2<f64>]) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Adam { m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * ((*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps) + cfg.weight_decay * *p);
            });
        }
    }
}

fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            g.mapv_inplace(|x| x * scale);
        }
    }
}

fn encode_all(model: &ModelCheckpoint, samples: &[Sample<'_>]) -> Result<(Vec<EncodedGraph>, Vec<f64>)> {
    let graphs = samples.iter().map(|(g, _)| model.encode(g)).collect::<Result<Vec<_>>>()?;
    Ok((graphs, samples.iter().map(|s| s.1).collect()))
}

/// Mean loss over a whole set, evaluated in fixed-size chunks.
fn mean_loss(model: &ModelCheckpoint, graphs: &[EncodedGraph], labels: &[f64], cw: Option<ClassWeights>) -> f64 {
    let mut total = 0.0;
    for (gs, ls) in graphs.chunks(256).zip(labels.chunks(256)) {
        let refs: Vec<&EncodedGraph> = gs.iter().collect();
        total += model.weighted_loss(&refs, ls, cw) * gs.len() as f64;
    }
    total / graphs.len() as f64
}

/// Optimizes `model` in place and returns the best-validation weights.
fn fit(
    mut model: ModelCheckpoint,
    cfg: &TrainConfig,
    lr: f64,
    seed: u64,
    train: &[Sample<'_>],
    val: &[Sample<'_>],
) -> Result<TrainOutcome> {
    let (train_x, train_y) = encode_all(&model, train)?;
    let (val_x, val_y) = encode_all(&model, val)?;
    // weights come from the training labels and also score validation
    let cw = if cfg.balance_classes && model.task == TaskKind::Binary { ClassWeights::balanced(&train_y) } else { None };
    let mut adam = Adam::new(&model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let started = Instant::now();

    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut log = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_id, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&EncodedGraph> = idx.iter().map(|&i| &train_x[i]).collect();
            let labels: Vec<f64> = idx.iter().map(|&i| train_y[i]).collect();
            let (loss, mut grads) = model.weighted_loss_and_grads(&batch, &labels, cw);
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::Diverged { epoch, batch: batch_id });
            }
            total += loss * idx.len() as f64;
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(model.params_mut(), &grads, lr, cfg);
        }
        let train_loss = total / train_x.len() as f64;
        let val_loss = if val_x.is_empty() { train_loss } else { mean_loss(&model, &val_x, &val_y, cw) };
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        log.push(EpochLog { epoch, train_loss, val_loss, wall_seconds: started.elapsed().as_secs_f64() });
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { checkpoint: best, log, best_epoch, best_val_loss: best_val })
}

/// Trains one model from scratch. Normalization statistics are fitted on the
/// training graphs only.
pub fn train_model(
    cfg: &TrainConfig,
    metric: Metric,
    seed: u64,
    train: &[Sample<'_>],
    val: &[Sample<'_>],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let stats = fit_stats(train.iter().map(|s| s.0))?;
    let mut model = ModelCheckpoint::init(&cfg.model_config(metric), stats, seed)?;
    // start the readout at the mean target so early epochs are not spent on the offset
    let mean_target = train.iter().map(|s| model.target_of(s.1)).sum::<f64>() / train.len() as f64;
    let offset = match model.task {
        TaskKind::Regression => mean_target,
        // balanced weights make the effective prior one half
        TaskKind::Binary if cfg.balance_classes => 0.0,
        TaskKind::Binary => {
            let p = mean_target.clamp(1e-3, 1.0 - 1e-3);
            (p / (1.0 - p)).ln()
        }
    };
    if let Some(last) = model.readout.layers.last_mut() {
        last.bias.fill(offset);
    }
    fit(model, cfg, cfg.learning_rate, seed, train, val)
}

/// One model per configured seed, on identical data.
pub fn train_ensemble(cfg: &TrainConfig, metric: Metric, train: &[Sample<'_>], val: &[Sample<'_>]) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    cfg.seeds.par_iter().map(|&seed| train_model(cfg, metric, seed, train, val)).collect()
}

/// Continues training `base` on extra data at a reduced learning rate.
/// Normalization statistics stay those of `base`.
pub fn fine_tune(base: &ModelCheckpoint, cfg: &TrainConfig, train: &[Sample<'_>], val: &[Sample<'_>]) -> Result<TrainOutcome> {
    cfg.validate()?;
    base.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { checkpoint: base.clone(), log: Vec::new(), best_epoch: 0, best_val_loss: f64::NAN });
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    fit(base.clone(), cfg, cfg.learning_rate * cfg.fine_tune_lr_factor, base.seed, train, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_dataset, metric_samples, Split};
    use crate::generate::{GenConfig, Workload};
    use crate::sim::SimConfig;

    fn small() -> TrainConfig {
        TrainConfig { hidden_dim: 8, epochs: 30, batch_size: 8, learning_rate: 3e-3, patience: 100, seeds: vec![1], ..TrainConfig::default() }
    }

    fn corpus(n: usize) -> crate::dataset::Dataset {
        make_dataset(&GenConfig::default(), Some(&SimConfig::default()), Workload::Mixed, n).unwrap()
    }

    #[test]
    fn validation_rules() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { seeds: vec![1, 2], ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { seeds: Vec::new(), ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { adam_beta2: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { weight_decay: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn adam_step_matches_the_update_rule() {
        let cfg = TrainConfig { weight_decay: 0.1, ..TrainConfig::default() };
        let mut p = Array2::from_elem((1, 2), 1.0);
        let g = Array2::from_shape_vec((1, 2), vec![0.5, -2.0]).unwrap();
        let mut adam = Adam::new(&[&p]);
        adam.step(vec![&mut p], std::slice::from_ref(&g), 0.01, &cfg);
        // after one step the bias-corrected moments are g and g^2
        for (x, gi) in p.iter().zip(g.iter()) {
            let expected = 1.0 - 0.01 * (gi / (gi.abs() + cfg.adam_eps) + 0.1);
            assert!((x - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut grads = vec![Array2::from_elem((1, 1), 3.0), Array2::from_elem((1, 1), 4.0)];
        clip_global_norm(&mut grads, 1.0);
        assert!((grads[0][[0, 0]] - 0.6).abs() < 1e-12 && (grads[1][[0, 0]] - 0.8).abs() < 1e-12);
        clip_global_norm(&mut grads, 10.0);
        assert!((grads[0][[0, 0]] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_fits() {
        let data = corpus(120);
        let train = metric_samples(data.split(Split::Train), Metric::Throughput);
        let val = metric_samples(data.split(Split::Val), Metric::Throughput);
        let a = train_model(&small(), Metric::Throughput, 1, &train, &val).unwrap();
        let b = train_model(&small(), Metric::Throughput, 1, &train, &val).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.log.len(), 30);
        let first = a.log[0].train_loss;
        let last = a.log.last().unwrap().train_loss;
        assert!(last < 0.5 * first, "train loss {first} -> {last}");
        assert!(a.best_epoch >= 1 && a.best_val_loss == a.log[a.best_epoch - 1].val_loss);
        assert_eq!(a.log_csv().lines().count(), 31);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let data = corpus(60);
        let train = metric_samples(data.split(Split::Train), Metric::ProcLatency);
        let val = metric_samples(data.split(Split::Val), Metric::ProcLatency);
        let cfg = TrainConfig { patience: 1, epochs: 200, learning_rate: 0.5, ..small() };
        let out = train_model(&cfg, Metric::ProcLatency, 3, &train, &val).unwrap();
        assert!(out.log.len() < 200);
        assert_eq!(out.log.len(), out.best_epoch + 1);
    }

    #[test]
    fn binary_training_runs_with_class_weights() {
        let data = corpus(80);
        let train = metric_samples(data.split(Split::Train), Metric::Success);
        let out = train_model(&TrainConfig { epochs: 3, ..small() }, Metric::Success, 1, &train, &[]).unwrap();
        assert_eq!(out.checkpoint.task, TaskKind::Binary);
        assert!(out.log.iter().all(|e| e.val_loss == e.train_loss));
    }

    #[test]
    fn fine_tuning() {
        let data = corpus(80);
        let train = metric_samples(data.split(Split::Train), Metric::Throughput);
        let base = train_model(&TrainConfig { epochs: 5, ..small() }, Metric::Throughput, 1, &train, &[]).unwrap().checkpoint;
        let none = fine_tune(&base, &TrainConfig { epochs: 0, ..small() }, &[], &[]).unwrap();
        assert_eq!(none.checkpoint, base);
        assert!(none.log.is_empty());
        let tuned = fine_tune(&base, &TrainConfig { epochs: 2, ..small() }, &train, &[]).unwrap();
        assert_eq!(tuned.checkpoint.stats, base.stats);
        assert_ne!(tuned.checkpoint, base);
        assert!(fine_tune(&base, &small(), &[], &[]).is_err());
        assert!(train_model(&small(), Metric::Throughput, 1, &[], &[]).is_err());
    }
}
