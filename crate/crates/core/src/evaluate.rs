//! Prediction quality: q-error, percentiles, grouped breakdowns and report
//! emission (JSON, CSV, SVG).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{balanced_indices, Example};
use crate::error::{Error, Result};
use crate::generate::HardwareDim;
use crate::graph::{JointGraph, Metric};
use crate::optimize::CostPredictor;

/// `max(c / ĉ, ĉ / c)`; 1 means a perfect estimate.
pub fn q_error(actual: f64, predicted: f64) -> Result<f64> {
    for v in [actual, predicted] {
        if !(v > 0.0) {
            return Err(Error::NonPositive(v));
        }
    }
    Ok((actual / predicted).max(predicted / actual))
}

/// Percentile `p` in `[0, 1]` with linear interpolation between order
/// statistics.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("percentile {p} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Several models of one metric acting as one: mean for regression, share of
/// positive votes for binary metrics (so `>= 0.5` is the majority for odd sizes).
pub struct Ensemble<'a> {
    metric: Metric,
    members: Vec<&'a dyn CostPredictor>,
}

impl<'a> Ensemble<'a> {
    pub fn new(members: Vec<&'a dyn CostPredictor>) -> Result<Self> {
        let metric = members.first().ok_or(Error::EmptyDataset)?.metric();
        if let Some(m) = members.iter().find(|m| m.metric() != metric) {
            return Err(Error::Config(format!("ensemble mixes metrics {metric} and {}", m.metric())));
        }
        Ok(Ensemble { metric, members })
    }
}

impl CostPredictor for Ensemble<'_> {
    fn metric(&self) -> Metric {
        self.metric
    }

    fn predict(&self, g: &JointGraph) -> Result<f64> {
        Ok(self.predict_batch(std::slice::from_ref(g))?[0])
    }

    fn predict_batch(&self, graphs: &[JointGraph]) -> Result<Vec<f64>> {
        let outputs = self.members.iter().map(|m| m.predict_batch(graphs)).collect::<Result<Vec<_>>>()?;
        let n = self.members.len() as f64;
        Ok((0..graphs.len())
            .map(|i| {
                if self.metric.is_binary() {
                    outputs.iter().filter(|o| o[i] >= 0.5).count() as f64 / n
                } else {
                    outputs.iter().map(|o| o[i]).sum::<f64>() / n
                }
            })
            .collect())
    }
}

/// One report cell. Regression cells carry Q50/Q95, binary cells accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub model: String,
    pub metric: Metric,
    pub group: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q50: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q95: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

impl EvalCell {
    /// Q50 for regression cells, accuracy for binary ones.
    pub fn headline(&self) -> f64 {
        self.q50.or(self.accuracy).unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub config_hash: String,
    pub cells: Vec<EvalCell>,
    pub notes: Vec<String>,
}

pub const EXCLUSION_NOTE: &str =
    "regression cells exclude failed executions (S=0), whose costs are undefined; binary cells use a class-balanced subset";

impl EvalReport {
    pub fn new(experiment: &str, config_hash: &str) -> Self {
        EvalReport {
            experiment: experiment.to_string(),
            config_hash: config_hash.to_string(),
            cells: Vec::new(),
            notes: vec![EXCLUSION_NOTE.to_string()],
        }
    }

    pub fn cell(&self, model: &str, metric: Metric, group: &str) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.model == model && c.metric == metric && c.group == group)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("experiment,model,metric,group,n,q50,q95,accuracy\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.experiment,
                c.model,
                c.metric.tag(),
                c.group,
                c.n,
                opt(c.q50),
                opt(c.q95),
                opt(c.accuracy)
            ));
        }
        s
    }

    /// Bar chart of the cells whose group is `group`.
    pub fn to_svg(&self, group: &str) -> String {
        let bars: Vec<(String, f64)> = self
            .cells
            .iter()
            .filter(|c| c.group == group)
            .map(|c| (format!("{} {}", c.model, c.metric.tag()), c.headline()))
            .collect();
        bar_chart(&format!("{} ({group}): Q50 or accuracy", self.experiment), &bars)
    }

    /// Writes `<stem>.json`, `<stem>.csv` and `<stem>.svg` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)? + "\n")?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let group = self.cells.first().map_or("all".to_string(), |c| c.group.clone());
        fs::write(dir.join(format!("{stem}.svg")), self.to_svg(&group))?;
        Ok(())
    }
}

/// Minimal static SVG bar chart.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let (w, bar_h, left) = (640.0, 22.0, 220.0);
    let h = 40.0 + bars.len() as f64 * (bar_h + 6.0);
    let max = bars.iter().map(|b| b.1).filter(|v| v.is_finite()).fold(0.0f64, f64::max).max(1e-12);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <text x=\"10\" y=\"20\">{}</text>\n",
        xml_escape(title)
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let y = 32.0 + i as f64 * (bar_h + 6.0);
        let len = if v.is_finite() { (w - left - 70.0) * v / max } else { 0.0 };
        s.push_str(&format!(
            "<text x=\"10\" y=\"{:.1}\">{}</text>\n<rect x=\"{left}\" y=\"{y:.1}\" width=\"{len:.1}\" height=\"{bar_h}\" fill=\"#4878a8\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{v:.3}</text>\n",
            y + 15.0,
            xml_escape(label),
            left + len + 4.0,
            y + 15.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bucket edges (low below the first, high from the second) for the mean of a
/// hardware feature over the hosts a query uses.
pub fn bucket_edges(dim: HardwareDim) -> (f64, f64) {
    match dim {
        HardwareDim::Cpu => (200.0, 500.0),
        HardwareDim::Ram => (4000.0, 16000.0),
        HardwareDim::Bandwidth => (200.0, 1600.0),
        HardwareDim::Latency => (5.0, 40.0),
    }
}

fn mean_host(g: &JointGraph, dim: HardwareDim) -> f64 {
    let hosts = g.hosts();
    let sum: f64 = hosts
        .iter()
        .map(|h| match dim {
            HardwareDim::Cpu => h.cpu,
            HardwareDim::Ram => h.ram,
            HardwareDim::Bandwidth => h.net_bandwidth,
            HardwareDim::Latency => h.net_latency,
        })
        .sum();
    sum / hosts.len() as f64
}

/// Every breakdown group an example belongs to, `all` first.
pub fn groups_of(e: &Example) -> Vec<String> {
    let mut out = vec!["all".to_string(), format!("family:{}", e.family.name())];
    for dim in HardwareDim::ALL {
        let v = mean_host(&e.graph, dim);
        let (lo, hi) = bucket_edges(dim);
        let bucket = if v < lo {
            "low"
        } else if v < hi {
            "mid"
        } else {
            "high"
        };
        out.push(format!("{}:{bucket}", dim.name()));
    }
    out
}

/// Scores one predictor on labeled examples with overall and grouped cells.
/// Groups without examples produce no cell.
pub fn evaluate_model(name: &str, model: &dyn CostPredictor, examples: &[&Example], balance_seed: u64) -> Result<Vec<EvalCell>> {
    let metric = model.metric();
    let mut pool: Vec<(&Example, f64)> = examples
        .iter()
        .filter_map(|e| e.label(metric).map(|l| (*e, l)))
        .filter(|(_, l)| metric.is_binary() || *l > 0.0)
        .collect();
    if metric.is_binary() {
        let labels: Vec<bool> = pool.iter().map(|(_, l)| *l >= 0.5).collect();
        let keep = balanced_indices(&labels, balance_seed);
        pool = keep.into_iter().map(|i| pool[i]).collect();
    }
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    let graphs: Vec<JointGraph> = pool.iter().map(|(e, _)| e.graph.clone()).collect();
    let predictions = model.predict_batch(&graphs)?;

    let mut by_group: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for ((e, label), pred) in pool.iter().zip(&predictions) {
        let score = if metric.is_binary() {
            f64::from(u8::from((*pred >= 0.5) == (*label >= 0.5)))
        } else {
            q_error(*label, *pred)?
        };
        for g in groups_of(e) {
            if !by_group.contains_key(&g) {
                order.push(g.clone());
            }
            by_group.entry(g).or_default().push(score);
        }
    }
    order[1..].sort();
    order
        .into_iter()
        .map(|group| {
            let scores = &by_group[&group];
            let n = scores.len();
            Ok(if metric.is_binary() {
                EvalCell {
                    model: name.to_string(),
                    metric,
                    group,
                    n,
                    q50: None,
                    q95: None,
                    accuracy: Some(scores.iter().sum::<f64>() / n as f64),
                }
            } else {
                EvalCell {
                    model: name.to_string(),
                    metric,
                    group,
                    n,
                    q50: Some(percentile(scores, 0.5)?),
                    q95: Some(percentile(scores, 0.95)?),
                    accuracy: None,
                }
            })
        })
        .collect()
}

/// [`evaluate_model`] for several named predictors into one report.
pub fn evaluate_models(
    experiment: &str,
    config_hash: &str,
    models: &[(&str, &dyn CostPredictor)],
    examples: &[&Example],
    balance_seed: u64,
) -> Result<EvalReport> {
    let mut report = EvalReport::new(experiment, config_hash);
    for (name, m) in models {
        report.cells.extend(evaluate_model(name, *m, examples, balance_seed)?);
    }
    Ok(report)
}

/// Prefixes every cell's group, e.g. `interpolation/all`.
pub fn prefix_groups(cells: Vec<EvalCell>, prefix: &str) -> Vec<EvalCell> {
    cells.into_iter().map(|c| EvalCell { group: format!("{prefix}/{}", c.group), ..c }).collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::dataset::make_dataset;
    use crate::generate::{GenConfig, Workload};
    use crate::sim::SimConfig;

    struct Constant(Metric, f64);

    impl CostPredictor for Constant {
        fn metric(&self) -> Metric {
            self.0
        }

        fn predict(&self, _: &JointGraph) -> Result<f64> {
            Ok(self.1)
        }
    }

    #[test]
    fn q_error_rejects_non_positive_values() {
        assert_eq!(q_error(4.0, 2.0).unwrap(), 2.0);
        assert_eq!(q_error(3.0, 3.0).unwrap(), 1.0);
        assert!(q_error(0.0, 1.0).is_err());
        assert!(q_error(1.0, -2.0).is_err());
        assert!(q_error(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn percentile_interpolates_between_order_statistics() {
        let v = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 0.5).unwrap(), 3.0);
        assert_eq!(percentile(&v, 1.0).unwrap(), 5.0);
        assert!((percentile(&v, 0.95).unwrap() - 4.8).abs() < 1e-12);
        assert_eq!(percentile(&[1.0, 2.0], 0.5).unwrap(), 1.5);
        assert!(percentile(&[], 0.5).is_err());
        assert!(percentile(&v, 1.5).is_err());
    }

    #[test]
    fn ensemble_aggregation() {
        let (a, b, c) = (Constant(Metric::Success, 0.9), Constant(Metric::Success, 0.6), Constant(Metric::Success, 0.1));
        let e = Ensemble::new(vec![&a, &b, &c]).unwrap();
        let g = make_dataset(&GenConfig::default(), None, Workload::Mixed, 1).unwrap().examples.remove(0).graph;
        assert!((e.predict(&g).unwrap() - 2.0 / 3.0).abs() < 1e-12);

        let (x, y) = (Constant(Metric::Throughput, 10.0), Constant(Metric::Throughput, 30.0));
        assert_eq!(Ensemble::new(vec![&x, &y]).unwrap().predict(&g).unwrap(), 20.0);
        assert!(Ensemble::new(vec![&x, &a]).is_err());
        assert!(Ensemble::new(Vec::new()).is_err());
    }

    #[test]
    fn constant_predictor_scores_match_a_direct_computation() {
        let data = make_dataset(&GenConfig::default(), Some(&SimConfig::default()), Workload::Mixed, 60).unwrap();
        let examples: Vec<&Example> = data.examples.iter().collect();

        let model = Constant(Metric::Throughput, 100.0);
        let cells = evaluate_model("c", &model, &examples, 0).unwrap();
        assert_eq!(cells[0].group, "all");
        let mut direct: Vec<f64> = examples
            .iter()
            .filter_map(|e| e.label(Metric::Throughput))
            .filter(|&l| l > 0.0)
            .map(|l| (l / 100.0).max(100.0 / l))
            .collect();
        direct.sort_by(f64::total_cmp);
        assert_eq!(cells[0].n, direct.len());
        assert_eq!(cells[0].q50, Some(percentile(&direct, 0.5).unwrap()));
        let family_total: usize = cells.iter().filter(|c| c.group.starts_with("family:")).map(|c| c.n).sum();
        assert_eq!(family_total, cells[0].n);

        // always predicting success is right on exactly half of a balanced pool
        let cells = evaluate_model("c", &Constant(Metric::Success, 1.0), &examples, 0).unwrap();
        if let Some(all) = cells.first() {
            assert_eq!(all.n % 2, 0);
            assert_eq!(all.accuracy, Some(0.5));
        }
    }

    #[test]
    fn report_csv_has_one_row_per_cell() {
        let mut r = EvalReport::new("x", "h");
        r.cells.push(EvalCell { model: "m".into(), metric: Metric::Throughput, group: "all".into(), n: 3, q50: Some(1.5), q95: Some(2.0), accuracy: None });
        r.cells.push(EvalCell { model: "m".into(), metric: Metric::Success, group: "all".into(), n: 4, q50: None, q95: None, accuracy: Some(0.75) });
        assert_eq!(r.to_csv().lines().count(), 3);
        assert!(r.cell("m", Metric::Success, "all").is_some());
        assert!(r.to_svg("all").starts_with("<svg"));
    }

    proptest! {
        #[test]
        fn q_error_is_symmetric_and_at_least_one(a in 1e-6f64..1e9, b in 1e-6f64..1e9) {
            let q = q_error(a, b).unwrap();
            prop_assert_eq!(q, q_error(b, a).unwrap());
            prop_assert!(q >= 1.0);
        }

        #[test]
        fn percentile_is_monotone_and_bounded(v in prop::collection::vec(-1e6f64..1e6, 1..40), p in 0.0f64..1.0, dp in 0.0f64..1.0) {
            let lo = percentile(&v, p).unwrap();
            let hi = percentile(&v, (p + dp).min(1.0)).unwrap();
            prop_assert!(lo <= hi + 1e-9);
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo >= min && hi <= max);
        }
    }
}
