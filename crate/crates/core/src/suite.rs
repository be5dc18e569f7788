//! Experiment orchestration: model sets, generalization and ablation suites,
//! and the placement speed-up study.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::{train_flat, FlatConfig, FlatModel};
use crate::dataset::{config_hash, make_dataset, metric_samples, Dataset, Split};
use crate::error::{Error, Result};
use crate::evaluate::{bar_chart, evaluate_model, percentile, prefix_groups, EvalReport, Ensemble};
use crate::generate::{item_rng, sample_hardware, sample_query_of, Extrapolation, GenConfig, HardwareDim, HardwareRanges, QueryFamily, Workload};
use crate::gnn::{Featurization, ModelCheckpoint, Scheme};
use crate::graph::{build_joint_graph, Metric};
use crate::optimize::{
    enumerate_candidates, predict_candidates, select_placement, speedup, CostPredictor, Direction, Ensembles,
    OraclePredictor, Selection,
};
use crate::sim::SimConfig;
use crate::train::{train_ensemble, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub gen: GenConfig,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub flat: FlatConfig,
    /// Training corpus size for suites that generate their own.
    pub corpus_size: usize,
    /// Items per generated evaluation set.
    pub eval_size: usize,
    /// Generator seed of evaluation sets; differs from the training seed so
    /// evaluation queries are unseen.
    pub eval_seed: u64,
    pub metrics: Vec<Metric>,
    pub balance_seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            gen: GenConfig::default(),
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            flat: FlatConfig::default(),
            corpus_size: 5000,
            eval_size: 500,
            eval_seed: 1_000_003,
            metrics: Metric::ALL.to_vec(),
            balance_seed: 0,
        }
    }
}

impl SuiteConfig {
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    fn regression_metrics(&self) -> Vec<Metric> {
        self.metrics.iter().copied().filter(|m| !m.is_binary()).collect()
    }
}

/// Trained ensembles per metric.
pub type ModelSet = BTreeMap<Metric, Vec<ModelCheckpoint>>;

/// Borrows a model set as predictor ensembles.
pub fn as_ensembles(models: &ModelSet) -> Ensembles<'_> {
    models.iter().map(|(&m, v)| (m, v.iter().map(|c| c as &dyn CostPredictor).collect())).collect()
}

/// Trains one ensemble per metric on the corpus's train split, selecting on
/// its validation split.
pub fn train_models(ds: &Dataset, metrics: &[Metric], cfg: &TrainConfig) -> Result<ModelSet> {
    let train = ds.split(Split::Train);
    let val = ds.split(Split::Val);
    let mut out = ModelSet::new();
    for &metric in metrics {
        let a = metric_samples(train.iter().copied(), metric);
        let b = metric_samples(val.iter().copied(), metric);
        let outcomes = train_ensemble(cfg, metric, &a, &b)?;
        out.insert(metric, outcomes.into_iter().map(|o| o.checkpoint).collect());
    }
    Ok(out)
}

pub fn train_flat_models(ds: &Dataset, metrics: &[Metric], cfg: &FlatConfig) -> Result<BTreeMap<Metric, FlatModel>> {
    let train = ds.split(Split::Train);
    metrics
        .iter()
        .map(|&metric| Ok((metric, train_flat(metric, &metric_samples(train.iter().copied(), metric), cfg)?)))
        .collect()
}

/// A labeled evaluation set drawn with the evaluation seed.
pub fn eval_corpus(cfg: &SuiteConfig, hardware: HardwareRanges, workload: Workload) -> Result<Dataset> {
    let gen = GenConfig { seed: cfg.eval_seed, hardware, ..cfg.gen.clone() };
    make_dataset(&gen, Some(&cfg.sim), workload, cfg.eval_size)
}

fn ensemble_cells(report: &mut EvalReport, name: &str, models: &ModelSet, examples: &[&crate::dataset::Example], prefix: &str, seed: u64) -> Result<()> {
    for members in models.values() {
        let ens = Ensemble::new(members.iter().map(|m| m as &dyn CostPredictor).collect())?;
        report.cells.extend(prefix_groups(evaluate_model(name, &ens, examples, seed)?, prefix));
    }
    Ok(())
}

/// Standard models on the in-range test split and on hardware values between
/// the training values.
pub fn interpolation_suite(models: &ModelSet, base: &Dataset, cfg: &SuiteConfig) -> Result<EvalReport> {
    let mut report = EvalReport::new("interpolation", &cfg.hash());
    let test = base.split(Split::Test);
    ensemble_cells(&mut report, "gnn", models, &test, "in_range", cfg.balance_seed)?;
    let eval = eval_corpus(cfg, HardwareRanges::interpolation(), Workload::Mixed)?;
    let refs: Vec<_> = eval.examples.iter().collect();
    ensemble_cells(&mut report, "gnn", models, &refs, "interpolation", cfg.balance_seed)?;
    Ok(report)
}

pub fn extrapolation_case_name(dim: HardwareDim, kind: Extrapolation) -> String {
    let k = match kind {
        Extrapolation::Stronger => "stronger",
        Extrapolation::Weaker => "weaker",
    };
    format!("{k}-{}", dim.name())
}

/// Every dimension in both directions.
pub fn all_extrapolation_cases() -> Vec<(HardwareDim, Extrapolation)> {
    HardwareDim::ALL
        .into_iter()
        .flat_map(|d| [(d, Extrapolation::Stronger), (d, Extrapolation::Weaker)])
        .collect()
}

/// Per case: retrain on the reduced range, evaluate on its own test split
/// (`<case>/in_range/...`) and on the held-back values (`<case>/eval/...`).
pub fn extrapolation_suite(cfg: &SuiteConfig, cases: &[(HardwareDim, Extrapolation)]) -> Result<EvalReport> {
    let mut report = EvalReport::new("extrapolation", &cfg.hash());
    let metrics = cfg.regression_metrics();
    for &(dim, kind) in cases {
        let name = extrapolation_case_name(dim, kind);
        let (train_values, eval_values) = HardwareRanges::extrapolation(dim, kind);
        let gen = GenConfig { hardware: cfg.gen.hardware.clone().with(dim, train_values), ..cfg.gen.clone() };
        let ds = make_dataset(&gen, Some(&cfg.sim), Workload::Mixed, cfg.corpus_size)?;
        let models = train_models(&ds, &metrics, &cfg.train)?;
        let test = ds.split(Split::Test);
        ensemble_cells(&mut report, "gnn", &models, &test, &format!("{name}/in_range"), cfg.balance_seed)?;
        let eval = eval_corpus(cfg, cfg.gen.hardware.clone().with(dim, eval_values), Workload::Mixed)?;
        let refs: Vec<_> = eval.examples.iter().collect();
        ensemble_cells(&mut report, "gnn", &models, &refs, &format!("{name}/eval"), cfg.balance_seed)?;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoHardware,
    OpsOnly,
    Traditional,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] =
        [AblationVariant::Full, AblationVariant::NoHardware, AblationVariant::OpsOnly, AblationVariant::Traditional];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoHardware => "no_hardware",
            AblationVariant::OpsOnly => "ops_only",
            AblationVariant::Traditional => "traditional",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let (scheme, featurization) = match self {
            AblationVariant::Full => (Scheme::Novel, Featurization::Full),
            AblationVariant::NoHardware => (Scheme::Novel, Featurization::NoHardware),
            AblationVariant::OpsOnly => (Scheme::Novel, Featurization::OpsOnly),
            AblationVariant::Traditional => (Scheme::Traditional, Featurization::Full),
        };
        TrainConfig { scheme, featurization, ..base.clone() }
    }
}

/// Trains each variant on identical data and seeds and scores it on the test
/// split. `full` may be supplied pre-trained (it must use `cfg.train`).
pub fn ablation_suite(ds: &Dataset, cfg: &SuiteConfig, variants: &[AblationVariant], full: Option<&ModelSet>) -> Result<EvalReport> {
    let mut report = EvalReport::new("ablation", &cfg.hash());
    let metrics = cfg.regression_metrics();
    let test = ds.split(Split::Test);
    for &variant in variants {
        let trained;
        let models = match (variant, full) {
            (AblationVariant::Full, Some(m)) => m,
            _ => {
                trained = train_models(ds, &metrics, &variant.apply(&cfg.train))?;
                &trained
            }
        };
        for metric in &metrics {
            let members = models.get(metric).ok_or_else(|| Error::Config(format!("no {metric} models for ablation")))?;
            let ens = Ensemble::new(members.iter().map(|m| m as &dyn CostPredictor).collect())?;
            report.cells.extend(evaluate_model(variant.name(), &ens, &test, cfg.balance_seed)?);
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementChoice {
    pub predictor: String,
    pub selection: Selection,
    /// Measured processing latency of the chosen candidate; `None` if it failed.
    pub chosen_latency_ms: Option<f64>,
    /// Failed choices count as 0.
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRow {
    pub family: QueryFamily,
    pub query: usize,
    pub candidates: usize,
    pub baseline_latency_ms: Option<f64>,
    /// Empty when the baseline failed; such rows are excluded from summaries.
    pub choices: Vec<PlacementChoice>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupSummary {
    pub predictor: String,
    pub family: String,
    pub n: usize,
    pub median_speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementReport {
    pub experiment: String,
    pub config_hash: String,
    pub rows: Vec<PlacementRow>,
    pub summary: Vec<SpeedupSummary>,
    pub notes: Vec<String>,
}

impl PlacementReport {
    pub fn median(&self, predictor: &str, family: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.predictor == predictor && s.family == family).map(|s| s.median_speedup)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,query,candidates,baseline_latency_ms,predictor,outcome,chosen_index,chosen_latency_ms,speedup\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
        for r in &self.rows {
            if r.choices.is_empty() {
                s.push_str(&format!("{},{},{},,,baseline_failed,,,\n", r.family.name(), r.query, r.candidates));
            }
            for c in &r.choices {
                let outcome = match c.selection {
                    Selection::Chosen { .. } => "chosen",
                    Selection::NoneViable { .. } => "none_viable",
                };
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    r.family.name(),
                    r.query,
                    r.candidates,
                    opt(r.baseline_latency_ms),
                    c.predictor,
                    outcome,
                    c.selection.index(),
                    opt(c.chosen_latency_ms),
                    c.speedup
                ));
            }
        }
        s
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)? + "\n")?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let bars: Vec<(String, f64)> =
            self.summary.iter().map(|s| (format!("{} {}", s.predictor, s.family), s.median_speedup)).collect();
        fs::write(dir.join(format!("{stem}.svg")), bar_chart("median processing-latency speed-up", &bars))?;
        Ok(())
    }
}

/// For `per_family` fresh queries per family: enumerate `k` candidates, take
/// the first (a random rule-satisfying placement) as the baseline, let each
/// predictor pick a placement minimizing processing latency, and measure both
/// with the noise-free execution model.
pub fn placement_study(
    predictors: &[(&str, &Ensembles<'_>)],
    cfg: &SuiteConfig,
    per_family: usize,
    k: usize,
) -> Result<PlacementReport> {
    let oracle = OraclePredictor::new(Metric::ProcLatency);
    let mut rows = Vec::new();
    for (fi, family) in QueryFamily::ALL.into_iter().enumerate() {
        for qi in 0..per_family {
            let mut rng = item_rng(cfg.eval_seed.wrapping_add(fi as u64 + 1), qi as u64);
            let q = sample_query_of(&cfg.gen, family, &mut rng);
            let n_hosts = cfg.gen.hosts_per_query.unwrap_or(q.operators.len());
            let hw = sample_hardware(&cfg.gen, n_hosts, &mut rng);
            let cands = enumerate_candidates(&q, &hw, k, &cfg.gen.bins, &mut rng)?;
            let graphs = cands.iter().map(|p| build_joint_graph(&q, &hw, p)).collect::<Result<Vec<_>>>()?;
            let measured: Vec<Option<f64>> = oracle
                .predict_batch(&graphs)?
                .into_iter()
                .map(|v| if v.is_finite() { Some(v) } else { None })
                .collect();
            let baseline = measured[0];
            let mut choices = Vec::new();
            if let Some(base) = baseline {
                for (name, models) in predictors {
                    let predicted = predict_candidates(&cands, &q, &hw, models)?;
                    let report = select_placement(&predicted, Metric::ProcLatency, Direction::Min);
                    let chosen = measured[report.selection.index()];
                    let factor = match chosen {
                        Some(c) => speedup(base, c)?,
                        None => 0.0,
                    };
                    choices.push(PlacementChoice {
                        predictor: name.to_string(),
                        selection: report.selection,
                        chosen_latency_ms: chosen,
                        speedup: factor,
                    });
                }
            }
            rows.push(PlacementRow { family, query: qi, candidates: cands.len(), baseline_latency_ms: baseline, choices });
        }
    }

    let mut summary = Vec::new();
    for (name, _) in predictors {
        let mut all = Vec::new();
        for family in QueryFamily::ALL {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.family == family)
                .flat_map(|r| r.choices.iter().filter(|c| c.predictor == *name).map(|c| c.speedup))
                .collect();
            all.extend(&values);
            if !values.is_empty() {
                summary.push(SpeedupSummary {
                    predictor: name.to_string(),
                    family: family.name().to_string(),
                    n: values.len(),
                    median_speedup: percentile(&values, 0.5)?,
                });
            }
        }
        if !all.is_empty() {
            summary.push(SpeedupSummary {
                predictor: name.to_string(),
                family: "all".to_string(),
                n: all.len(),
                median_speedup: percentile(&all, 0.5)?,
            });
        }
    }
    let excluded = rows.iter().filter(|r| r.baseline_latency_ms.is_none()).count();
    let notes = vec![
        "costs measured with the noise-free execution model".to_string(),
        format!("{excluded} queries excluded because the baseline placement failed"),
        "a chosen placement that fails counts as speed-up 0".to_string(),
    ];
    Ok(PlacementReport { experiment: "placement-study".into(), config_hash: cfg.hash(), rows, summary, notes })
}
