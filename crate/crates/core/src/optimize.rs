//! Placement candidate enumeration and ensemble-guided selection.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_joint_graph, kahn, CostVector, Edge, HardwareNode, HostId, JointGraph, Metric, OpId, Placement, QueryGraph};
use crate::sim::{simulate, SimConfig};

/// Inclusive cpu (%) and ram (MB) interval of one capability bin. Open upper
/// ends use `f64::MAX` so the bounds survive JSON and TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub cpu: (f64, f64),
    pub ram: (f64, f64),
    /// Whether a node must satisfy both intervals (`true`) or either one.
    pub require_both: bool,
}

impl Bin {
    pub fn contains(&self, h: &HardwareNode) -> bool {
        let cpu = (self.cpu.0..=self.cpu.1).contains(&h.cpu);
        let ram = (self.ram.0..=self.ram.1).contains(&h.ram);
        if self.require_both {
            cpu && ram
        } else {
            cpu || ram
        }
    }
}

/// Three overlapping hardware bins, weakest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinConfig {
    pub bins: [Bin; 3],
}

impl Default for BinConfig {
    fn default() -> Self {
        BinConfig {
            bins: [
                Bin { cpu: (0.0, 200.0), ram: (0.0, 4096.0), require_both: false },
                Bin { cpu: (100.0, 500.0), ram: (2048.0, 16384.0), require_both: true },
                Bin { cpu: (400.0, f64::MAX), ram: (16384.0, f64::MAX), require_both: false },
            ],
        }
    }
}

impl BinConfig {
    /// Index of the highest bin the node falls into.
    pub fn rank(&self, h: &HardwareNode) -> Result<usize> {
        (0..3)
            .rev()
            .find(|&b| self.bins[b].contains(h))
            .ok_or_else(|| Error::Config(format!("host {} (cpu {}, ram {}) falls into no hardware bin", h.id, h.cpu, h.ram)))
    }
}

/// Samples up to `k` distinct placements that keep data flowing from weaker to
/// equal-or-stronger hosts and never send it back to a host it already left.
pub fn enumerate_candidates<R: Rng>(
    q: &QueryGraph,
    hw: &[HardwareNode],
    k: usize,
    bins: &BinConfig,
    rng: &mut R,
) -> Result<Vec<Placement>> {
    if hw.is_empty() {
        return Err(Error::InvalidHardware("empty inventory".into()));
    }
    let ranks = hw.iter().map(|h| bins.rank(h)).collect::<Result<Vec<_>>>()?;
    let index: BTreeMap<&OpId, usize> = q.operators.iter().enumerate().map(|(i, op)| (&op.id, i)).collect();
    let edges: Vec<(usize, usize)> = q
        .edges
        .iter()
        .map(|Edge(a, b)| match (index.get(a), index.get(b)) {
            (Some(&i), Some(&j)) => Ok((i, j)),
            _ => Err(Error::InvalidQuery(format!("edge {a} -> {b} references an unknown operator"))),
        })
        .collect::<Result<_>>()?;
    let (order, cyclic) = kahn(q.operators.len(), &edges, |i| q.operators[i].id.clone());
    if !cyclic.is_empty() {
        return Err(Error::CycleDetected);
    }
    let mut preds = vec![Vec::new(); q.operators.len()];
    for &(a, b) in &edges {
        preds[b].push(a);
    }

    let budget = 20 * k.max(1);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..budget {
        if out.len() >= k {
            break;
        }
        if let Some(hosts) = sample_once(&order, &preds, &ranks, rng) {
            let p: Placement = hosts
                .iter()
                .enumerate()
                .map(|(op, &h)| (q.operators[op].id.clone(), hw[h].id.clone()))
                .collect();
            if seen.insert(p.clone()) {
                out.push(p);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoFeasiblePlacement { attempts: budget });
    }
    Ok(out)
}

/// One forward pass of the sampler; `None` when it paints itself into a corner.
fn sample_once<R: Rng>(order: &[usize], preds: &[Vec<usize>], ranks: &[usize], rng: &mut R) -> Option<Vec<usize>> {
    let n_hosts = ranks.len();
    let mut host = vec![usize::MAX; preds.len()];
    // reach[a][b]: data can already flow from host a to host b
    let mut reach = vec![vec![false; n_hosts]; n_hosts];
    for &op in order {
        let min_rank = preds[op].iter().map(|&p| ranks[host[p]]).max().unwrap_or(0);
        let allowed: Vec<usize> = (0..n_hosts)
            .filter(|&h| ranks[h] >= min_rank)
            .filter(|&h| preds[op].iter().all(|&p| host[p] == h || !reach[h][host[p]]))
            .collect();
        let &h = allowed.choose(rng)?;
        host[op] = h;
        for &p in &preds[op] {
            let from = host[p];
            if from == h || reach[from][h] {
                continue;
            }
            // close the transitive relation over the new link from -> h
            let sources: Vec<usize> = (0..n_hosts).filter(|&a| a == from || reach[a][from]).collect();
            let targets: Vec<usize> = (0..n_hosts).filter(|&b| b == h || reach[h][b]).collect();
            for &a in &sources {
                for &b in &targets {
                    if a != b {
                        reach[a][b] = true;
                    }
                }
            }
        }
    }
    Some(host)
}

/// Rule violations of a placement, checked independently of the sampler.
pub fn check_placement_rules(q: &QueryGraph, hw: &[HardwareNode], p: &Placement, bins: &BinConfig) -> Vec<String> {
    let mut out = Vec::new();
    let by_id: BTreeMap<&HostId, &HardwareNode> = hw.iter().map(|h| (&h.id, h)).collect();
    let mut host_of: BTreeMap<&OpId, &HostId> = BTreeMap::new();
    for op in &q.operators {
        match p.host_of(&op.id) {
            Some(h) if by_id.contains_key(h) => {
                host_of.insert(&op.id, h);
            }
            Some(h) => out.push(format!("operator {} placed on unknown host {h}", op.id)),
            None => out.push(format!("operator {} is not placed", op.id)),
        }
    }
    if !out.is_empty() {
        return out;
    }

    // data only moves to hosts of equal or higher rank
    let mut host_edges: BTreeSet<(&HostId, &HostId)> = BTreeSet::new();
    for Edge(a, b) in &q.edges {
        let (ha, hb) = (host_of[a], host_of[b]);
        match (bins.rank(by_id[ha]), bins.rank(by_id[hb])) {
            (Ok(ra), Ok(rb)) if rb < ra => {
                out.push(format!("edge {a} -> {b} moves data from host {ha} (rank {ra}) to weaker host {hb} (rank {rb})"))
            }
            (Err(e), _) | (_, Err(e)) => out.push(e.to_string()),
            _ => {}
        }
        if ha != hb {
            host_edges.insert((ha, hb));
        }
    }

    // contracted host graph must be acyclic: three-colour depth-first search
    let mut adj: BTreeMap<&HostId, Vec<&HostId>> = BTreeMap::new();
    for &(a, b) in &host_edges {
        adj.entry(a).or_default().push(b);
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Colour {
        White,
        Grey,
        Black,
    }
    fn visit<'a>(v: &'a HostId, adj: &BTreeMap<&'a HostId, Vec<&'a HostId>>, colour: &mut BTreeMap<&'a HostId, Colour>) -> bool {
        colour.insert(v, Colour::Grey);
        for &w in adj.get(v).map(Vec::as_slice).unwrap_or(&[]) {
            match colour.get(w).copied().unwrap_or(Colour::White) {
                Colour::Grey => return true,
                Colour::White if visit(w, adj, colour) => return true,
                _ => {}
            }
        }
        colour.insert(v, Colour::Black);
        false
    }
    let mut colour = BTreeMap::new();
    for &h in adj.keys() {
        if colour.get(h).copied().unwrap_or(Colour::White) == Colour::White && visit(h, &adj, &mut colour) {
            out.push(format!("data returns to host {h} after leaving it"));
            break;
        }
    }
    out
}

/// A trained (or oracle) estimator for one metric. Regression predictors
/// return decoded cost values; binary predictors return the probability of
/// the positive class.
pub trait CostPredictor: Sync {
    fn metric(&self) -> Metric;

    fn predict(&self, g: &JointGraph) -> Result<f64>;

    fn predict_batch(&self, graphs: &[JointGraph]) -> Result<Vec<f64>> {
        graphs.iter().map(|g| self.predict(g)).collect()
    }
}

/// The execution model itself used as a predictor (noise off).
#[derive(Clone, Debug)]
pub struct OraclePredictor {
    pub metric: Metric,
    pub sim: SimConfig,
}

impl OraclePredictor {
    pub fn new(metric: Metric) -> Self {
        OraclePredictor { metric, sim: SimConfig::noiseless() }
    }
}

impl CostPredictor for OraclePredictor {
    fn metric(&self) -> Metric {
        self.metric
    }

    fn predict(&self, g: &JointGraph) -> Result<f64> {
        let c: CostVector = simulate(g, &self.sim);
        Ok(match c.value(self.metric) {
            Some(v) => v,
            None if self.metric == Metric::Throughput => 0.0,
            None => f64::INFINITY,
        })
    }
}

/// Per-metric model ensembles.
pub type Ensembles<'a> = BTreeMap<Metric, Vec<&'a dyn CostPredictor>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementCandidate {
    pub placement: Placement,
    /// Raw output of every ensemble member.
    pub predictions: BTreeMap<Metric, Vec<f64>>,
    /// Mean for regression metrics, majority vote (0/1) for binary ones.
    pub aggregated: BTreeMap<Metric, f64>,
}

/// Arithmetic mean of regression outputs.
pub fn mean_vote(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Strict majority of thresholded probabilities.
pub fn majority_vote(probabilities: &[f64]) -> bool {
    let yes = probabilities.iter().filter(|&&p| p >= 0.5).count();
    2 * yes > probabilities.len()
}

fn aggregate(metric: Metric, values: &[f64]) -> f64 {
    if metric.is_binary() {
        if majority_vote(values) {
            1.0
        } else {
            0.0
        }
    } else {
        mean_vote(values)
    }
}

/// Runs every ensemble over a batch of placements of one query.
pub fn predict_candidates(
    placements: &[Placement],
    q: &QueryGraph,
    hw: &[HardwareNode],
    models: &Ensembles<'_>,
) -> Result<Vec<PlacementCandidate>> {
    let graphs = placements.iter().map(|p| build_joint_graph(q, hw, p)).collect::<Result<Vec<_>>>()?;
    let mut per_model: BTreeMap<Metric, Vec<Vec<f64>>> = BTreeMap::new();
    for (&metric, ensemble) in models {
        if ensemble.is_empty() {
            return Err(Error::Config(format!("empty ensemble for metric {metric}")));
        }
        let outputs = ensemble.iter().map(|m| m.predict_batch(&graphs)).collect::<Result<Vec<_>>>()?;
        per_model.insert(metric, outputs);
    }
    Ok(placements
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let predictions: BTreeMap<Metric, Vec<f64>> =
                per_model.iter().map(|(&m, outs)| (m, outs.iter().map(|o| o[i]).collect())).collect();
            let aggregated = predictions.iter().map(|(&m, v)| (m, aggregate(m, v))).collect();
            PlacementCandidate { placement: p.clone(), predictions, aggregated }
        })
        .collect())
}

/// Single-candidate form of [`predict_candidates`].
pub fn predict_ensemble(
    c: &Placement,
    q: &QueryGraph,
    hw: &[HardwareNode],
    models: &Ensembles<'_>,
) -> Result<PlacementCandidate> {
    Ok(predict_candidates(std::slice::from_ref(c), q, hw, models)?.remove(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Min,
    Max,
}

impl Direction {
    pub fn for_metric(metric: Metric) -> Direction {
        if metric == Metric::Throughput {
            Direction::Max
        } else {
            Direction::Min
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub index: usize,
    pub success_vote: Option<bool>,
    pub backpressure_vote: Option<bool>,
    pub viable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Selection {
    Chosen { index: usize },
    /// Every candidate was filtered out; `fallback` has the highest mean
    /// predicted success probability (ties to the lowest index).
    NoneViable { fallback: usize },
}

impl Selection {
    /// The index to deploy, including the labeled fallback.
    pub fn index(&self) -> usize {
        match *self {
            Selection::Chosen { index } | Selection::NoneViable { fallback: index } => index,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub selection: Selection,
    pub decisions: Vec<FilterDecision>,
}

/// Drops candidates voted unsuccessful or backpressured, then picks the best
/// aggregated target value; ties go to the lowest index.
pub fn select_placement(cands: &[PlacementCandidate], target: Metric, direction: Direction) -> SelectionReport {
    let vote = |c: &PlacementCandidate, m: Metric| c.aggregated.get(&m).map(|&v| v >= 0.5);
    let decisions: Vec<FilterDecision> = cands
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let success_vote = vote(c, Metric::Success);
            let backpressure_vote = vote(c, Metric::Backpressure);
            let viable = success_vote != Some(false) && backpressure_vote != Some(true);
            FilterDecision { index, success_vote, backpressure_vote, viable }
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for d in decisions.iter().filter(|d| d.viable) {
        let Some(&value) = cands[d.index].aggregated.get(&target) else { continue };
        let better = match best {
            None => true,
            Some((_, b)) => match direction {
                Direction::Min => value < b,
                Direction::Max => value > b,
            },
        };
        if better {
            best = Some((d.index, value));
        }
    }
    let selection = match best {
        Some((index, _)) => Selection::Chosen { index },
        None => {
            let mut fallback = 0;
            let mut best_p = f64::NEG_INFINITY;
            for (i, c) in cands.iter().enumerate() {
                let p = c.predictions.get(&Metric::Success).map_or(0.0, |v| mean_vote(v));
                if p > best_p {
                    best_p = p;
                    fallback = i;
                }
            }
            Selection::NoneViable { fallback }
        }
    };
    SelectionReport { selection, decisions }
}

/// Ratio of the baseline cost to the chosen cost.
pub fn speedup(baseline_cost: f64, chosen_cost: f64) -> Result<f64> {
    for v in [baseline_cost, chosen_cost] {
        if !(v > 0.0) {
            return Err(Error::NonPositive(v));
        }
    }
    Ok(baseline_cost / chosen_cost)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::features::{DataType, FilterFunction};
    use crate::generate::{sample_hardware, sample_query, GenConfig, QueryBuilder};

    fn host(id: &str, cpu: f64, ram: f64) -> HardwareNode {
        HardwareNode { id: HostId::from(id), cpu, ram, net_bandwidth: 1000.0, net_latency: 5.0 }
    }

    fn chain() -> QueryGraph {
        let mut b = QueryBuilder::new();
        let s = b.source(1000.0, vec![DataType::Int; 3]);
        let f = b.filter(&s, FilterFunction::Gt, DataType::Int, 0.5);
        b.sink(&f)
    }

    fn assign(q: &QueryGraph, hosts: &[&str]) -> Placement {
        q.operators.iter().zip(hosts).map(|(op, h)| (op.id.clone(), HostId::from(*h))).collect()
    }

    fn candidate(values: &[(Metric, f64)]) -> PlacementCandidate {
        PlacementCandidate {
            placement: Placement::default(),
            predictions: values.iter().map(|&(m, v)| (m, vec![v])).collect(),
            aggregated: values.iter().map(|&(m, v)| (m, aggregate(m, &[v]))).collect(),
        }
    }

    #[test]
    fn bin_ranks() {
        let bins = BinConfig::default();
        let rank = |cpu, ram| bins.rank(&host("h", cpu, ram)).unwrap();
        assert_eq!(rank(150.0, 1000.0), 0);
        assert_eq!(rank(300.0, 1000.0), 0);
        assert_eq!(rank(300.0, 8000.0), 1);
        assert_eq!(rank(450.0, 8000.0), 2);
        assert_eq!(rank(50.0, 32000.0), 2);
        let strict = BinConfig {
            bins: [
                Bin { cpu: (0.0, 100.0), ram: (0.0, 1000.0), require_both: true },
                Bin { cpu: (0.0, 100.0), ram: (0.0, 1000.0), require_both: true },
                Bin { cpu: (0.0, 100.0), ram: (0.0, 1000.0), require_both: true },
            ],
        };
        assert!(strict.rank(&host("h", 500.0, 500.0)).is_err());
        assert!(enumerate_candidates(&chain(), &[host("h", 500.0, 500.0)], 3, &strict, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn default_bins_survive_json() {
        let bins = BinConfig::default();
        let back: BinConfig = serde_json::from_str(&serde_json::to_string(&bins).unwrap()).unwrap();
        assert_eq!(back, bins);
    }

    #[test]
    fn rule_checker_flags_each_violation() {
        let q = chain();
        let hw = [host("weak", 100.0, 1000.0), host("mid", 300.0, 8000.0), host("strong", 800.0, 32000.0)];
        let bins = BinConfig::default();
        assert!(check_placement_rules(&q, &hw, &assign(&q, &["weak", "mid", "strong"]), &bins).is_empty());
        assert!(check_placement_rules(&q, &hw, &assign(&q, &["mid", "mid", "mid"]), &bins).is_empty());
        assert_eq!(check_placement_rules(&q, &hw, &assign(&q, &["strong", "weak", "strong"]), &bins).len(), 2);
        assert_eq!(check_placement_rules(&q, &hw, &assign(&q, &["weak", "nowhere", "weak"]), &bins).len(), 1);
        assert_eq!(check_placement_rules(&q, &hw, &assign(&q, &["weak", "weak"]), &bins).len(), 1);

        // equal ranks permit a move, but not a return to the first host
        let twins = [host("a", 300.0, 8000.0), host("b", 300.0, 8000.0)];
        let back = check_placement_rules(&q, &twins, &assign(&q, &["a", "b", "a"]), &bins);
        assert!(back.iter().any(|v| v.contains("returns")));
    }

    #[test]
    fn enumeration_is_exhaustive_on_a_tiny_inventory() {
        let q = chain();
        let hw = [host("weak", 100.0, 1000.0), host("strong", 800.0, 32000.0)];
        // valid host sequences are non-decreasing in rank: www, wws, wss, sss
        let cands = enumerate_candidates(&q, &hw, 100, &BinConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(cands.len(), 4);
    }

    #[test]
    fn selection_filters_then_optimises() {
        use Metric::*;
        let cands = [
            candidate(&[(ProcLatency, 5.0), (Success, 0.9), (Backpressure, 0.1)]),
            candidate(&[(ProcLatency, 1.0), (Success, 0.2), (Backpressure, 0.1)]),
            candidate(&[(ProcLatency, 2.0), (Success, 0.9), (Backpressure, 0.8)]),
            candidate(&[(ProcLatency, 3.0), (Success, 0.7), (Backpressure, 0.3)]),
            candidate(&[(ProcLatency, 3.0), (Success, 0.8), (Backpressure, 0.0)]),
        ];
        let r = select_placement(&cands, ProcLatency, Direction::Min);
        assert_eq!(r.selection, Selection::Chosen { index: 3 });
        assert_eq!(r.decisions.iter().filter(|d| d.viable).count(), 3);
        assert_eq!(select_placement(&cands, ProcLatency, Direction::Max).selection, Selection::Chosen { index: 0 });

        let doomed = [candidate(&[(ProcLatency, 1.0), (Success, 0.3)]), candidate(&[(ProcLatency, 2.0), (Success, 0.4)])];
        assert_eq!(select_placement(&doomed, ProcLatency, Direction::Min).selection, Selection::NoneViable { fallback: 1 });
    }

    #[test]
    fn votes() {
        assert!(majority_vote(&[0.6, 0.7, 0.1]));
        assert!(!majority_vote(&[0.6, 0.1]));
        assert_eq!(mean_vote(&[1.0, 2.0, 6.0]), 3.0);
        assert_eq!(Direction::for_metric(Metric::Throughput), Direction::Max);
        assert_eq!(Direction::for_metric(Metric::E2eLatency), Direction::Min);
        assert!(speedup(0.0, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sampled_placements_obey_the_rules(seed in any::<u64>(), k in 1usize..30) {
            let cfg = GenConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = sample_query(&cfg, &mut rng);
            let hw = sample_hardware(&cfg, q.operators.len(), &mut rng);
            let cands = enumerate_candidates(&q, &hw, k, &cfg.bins, &mut rng).unwrap();
            prop_assert!(cands.len() <= k);
            prop_assert_eq!(cands.iter().collect::<BTreeSet<_>>().len(), cands.len());
            for p in &cands {
                prop_assert!(check_placement_rules(&q, &hw, p, &cfg.bins).is_empty());
            }
        }
    }
}
