//! Synthetic workload, hardware and placement generation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    AggFunction, AggregationFeatures, Category, DataType, FilterFeatures, FilterFunction, GroupByType,
    JoinFeatures, OperatorFeatures, SinkFeatures, SourceFeatures, WindowPolicy, WindowSpec, WindowType,
};
use crate::graph::{build_joint_graph, Edge, HardwareNode, HostId, JointGraph, OpId, OperatorNode, QueryGraph};
use crate::optimize::{enumerate_candidates, BinConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryFamily {
    Linear,
    TwoWayJoin,
    ThreeWayJoin,
}

impl QueryFamily {
    pub const ALL: [QueryFamily; 3] = [QueryFamily::Linear, QueryFamily::TwoWayJoin, QueryFamily::ThreeWayJoin];

    pub fn name(self) -> &'static str {
        match self {
            QueryFamily::Linear => "linear",
            QueryFamily::TwoWayJoin => "two_way_join",
            QueryFamily::ThreeWayJoin => "three_way_join",
        }
    }

    pub fn parse(s: &str) -> Option<QueryFamily> {
        match s {
            "linear" => Some(QueryFamily::Linear),
            "two_way_join" | "2-way" | "two-way" => Some(QueryFamily::TwoWayJoin),
            "three_way_join" | "3-way" | "three-way" => Some(QueryFamily::ThreeWayJoin),
            _ => None,
        }
    }
}

/// Value lists the hardware features are drawn from. `ram` is in MB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareRanges {
    pub cpu: Vec<f64>,
    pub ram: Vec<f64>,
    pub bandwidth: Vec<f64>,
    pub latency: Vec<f64>,
}

impl Default for HardwareRanges {
    fn default() -> Self {
        HardwareRanges {
            cpu: vec![50.0, 100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0],
            ram: vec![1000.0, 2000.0, 4000.0, 8000.0, 16000.0, 24000.0, 32000.0],
            bandwidth: vec![25.0, 50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 6400.0, 10000.0],
            latency: vec![1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0, 160.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardwareDim {
    Cpu,
    Ram,
    Bandwidth,
    Latency,
}

impl HardwareDim {
    pub const ALL: [HardwareDim; 4] = [HardwareDim::Cpu, HardwareDim::Ram, HardwareDim::Bandwidth, HardwareDim::Latency];

    pub fn name(self) -> &'static str {
        match self {
            HardwareDim::Cpu => "cpu",
            HardwareDim::Ram => "ram",
            HardwareDim::Bandwidth => "bandwidth",
            HardwareDim::Latency => "latency",
        }
    }

    pub fn parse(s: &str) -> Option<HardwareDim> {
        HardwareDim::ALL.into_iter().find(|d| d.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    Stronger,
    Weaker,
}

impl HardwareRanges {
    pub fn get(&self, dim: HardwareDim) -> &[f64] {
        match dim {
            HardwareDim::Cpu => &self.cpu,
            HardwareDim::Ram => &self.ram,
            HardwareDim::Bandwidth => &self.bandwidth,
            HardwareDim::Latency => &self.latency,
        }
    }

    pub fn with(mut self, dim: HardwareDim, values: Vec<f64>) -> Self {
        match dim {
            HardwareDim::Cpu => self.cpu = values,
            HardwareDim::Ram => self.ram = values,
            HardwareDim::Bandwidth => self.bandwidth = values,
            HardwareDim::Latency => self.latency = values,
        }
        self
    }

    /// Values inside the training range that are not training values.
    pub fn interpolation() -> Self {
        HardwareRanges {
            cpu: vec![75.0, 150.0, 250.0, 350.0, 450.0, 550.0, 650.0, 750.0],
            ram: vec![1500.0, 3000.0, 6000.0, 12000.0, 20000.0, 28000.0],
            bandwidth: vec![35.0, 75.0, 150.0, 250.0, 550.0, 1200.0, 1900.0, 4800.0, 8000.0],
            latency: vec![3.0, 7.0, 15.0, 30.0, 60.0, 120.0],
        }
    }

    /// Reduced training list and held-back evaluation list for one dimension.
    pub fn extrapolation(dim: HardwareDim, kind: Extrapolation) -> (Vec<f64>, Vec<f64>) {
        let (train, eval): (&[f64], &[f64]) = match (kind, dim) {
            (Extrapolation::Stronger, HardwareDim::Ram) => (&[1000.0, 2000.0, 4000.0, 8000.0, 16000.0], &[24000.0, 32000.0]),
            (Extrapolation::Stronger, HardwareDim::Cpu) => {
                (&[50.0, 100.0, 200.0, 300.0, 400.0, 500.0, 600.0], &[700.0, 800.0])
            }
            (Extrapolation::Stronger, HardwareDim::Bandwidth) => {
                (&[25.0, 50.0, 100.0, 200.0, 300.0, 800.0, 1600.0, 3200.0], &[6400.0, 10000.0])
            }
            (Extrapolation::Stronger, HardwareDim::Latency) => (&[5.0, 10.0, 20.0, 40.0, 80.0, 160.0], &[1.0, 2.0]),
            (Extrapolation::Weaker, HardwareDim::Ram) => (&[4000.0, 8000.0, 16000.0, 24000.0, 32000.0], &[1000.0, 2000.0]),
            (Extrapolation::Weaker, HardwareDim::Cpu) => {
                (&[200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0], &[50.0, 100.0])
            }
            (Extrapolation::Weaker, HardwareDim::Bandwidth) => {
                (&[100.0, 200.0, 300.0, 800.0, 1600.0, 3200.0, 6400.0, 10000.0], &[25.0, 50.0])
            }
            (Extrapolation::Weaker, HardwareDim::Latency) => (&[1.0, 2.0, 5.0, 10.0, 20.0, 40.0], &[80.0, 160.0]),
        };
        (train.to_vec(), eval.to_vec())
    }

    /// Named override blocks: `interpolation`, or `<stronger|weaker>-<dim>-<train|eval>`.
    pub fn preset(name: &str) -> Option<HardwareRanges> {
        if name == "interpolation" {
            return Some(HardwareRanges::interpolation());
        }
        let mut parts = name.split('-');
        let kind = match parts.next()? {
            "stronger" => Extrapolation::Stronger,
            "weaker" => Extrapolation::Weaker,
            _ => return None,
        };
        let dim = HardwareDim::parse(parts.next()?)?;
        let (train, eval) = HardwareRanges::extrapolation(dim, kind);
        let values = match parts.next()? {
            "train" => train,
            "eval" => eval,
            _ => return None,
        };
        if parts.next().is_some() {
            return None;
        }
        Some(HardwareRanges::default().with(dim, values))
    }

    fn validate(&self) -> Result<()> {
        for dim in HardwareDim::ALL {
            let v = self.get(dim);
            if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Config(format!("hardware range {} must be a non-empty list of positive values", dim.name())));
            }
        }
        Ok(())
    }
}

/// Value lists for the workload side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadRanges {
    pub event_rate_linear: Vec<f64>,
    pub event_rate_two_way: Vec<f64>,
    pub event_rate_three_way: Vec<f64>,
    pub tuple_width: (usize, usize),
    pub count_window_sizes: Vec<f64>,
    pub time_window_sizes: Vec<f64>,
    /// Slide as a fraction of the window length, sampled uniformly.
    pub slide_fraction: (f64, f64),
    pub agg_functions: Vec<AggFunction>,
}

impl Default for WorkloadRanges {
    fn default() -> Self {
        WorkloadRanges {
            event_rate_linear: vec![100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 6400.0, 12800.0, 25600.0],
            event_rate_two_way: vec![50.0, 100.0, 250.0, 500.0, 750.0, 1000.0, 1250.0, 1500.0, 1750.0, 2000.0],
            event_rate_three_way: vec![
                20.0, 50.0, 100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0, 900.0, 1000.0,
            ],
            tuple_width: (3, 10),
            count_window_sizes: vec![5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0, 640.0],
            time_window_sizes: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
            slide_fraction: (0.3, 0.7),
            agg_functions: vec![AggFunction::Min, AggFunction::Max, AggFunction::Mean],
        }
    }
}

impl WorkloadRanges {
    fn event_rates(&self, family: QueryFamily) -> &[f64] {
        match family {
            QueryFamily::Linear => &self.event_rate_linear,
            QueryFamily::TwoWayJoin => &self.event_rate_two_way,
            QueryFamily::ThreeWayJoin => &self.event_rate_three_way,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Weights of linear, two-way and three-way join queries.
    pub family_mix: [f64; 3],
    /// Probability of 1, 2, 3, 4 filters.
    pub filter_counts: [f64; 4],
    pub aggregation_probability: f64,
    /// Inventory size per query; `None` means one host per operator.
    pub hosts_per_query: Option<usize>,
    pub hardware: HardwareRanges,
    pub workload: WorkloadRanges,
    pub bins: BinConfig,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            family_mix: [0.35, 0.34, 0.31],
            filter_counts: [0.35, 0.34, 0.24, 0.06],
            aggregation_probability: 0.5,
            hosts_per_query: None,
            hardware: HardwareRanges::default(),
            workload: WorkloadRanges::default(),
            bins: BinConfig::default(),
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("family_mix", &self.family_mix[..]), ("filter_counts", &self.filter_counts[..])] {
            let sum: f64 = w.iter().sum();
            if !(sum.is_finite() && sum > 0.0) || w.iter().any(|x| *x < 0.0) {
                return Err(Error::Config(format!("gen.{name} must be non-negative with a positive sum, got {sum}")));
            }
        }
        if !(0.0..=1.0).contains(&self.aggregation_probability) {
            return Err(Error::Config("gen.aggregation_probability must lie in [0, 1]".into()));
        }
        if self.hosts_per_query == Some(0) {
            return Err(Error::Config("gen.hosts_per_query must be positive".into()));
        }
        self.hardware.validate()?;
        let w = &self.workload;
        let lists = [
            ("event_rate_linear", &w.event_rate_linear),
            ("event_rate_two_way", &w.event_rate_two_way),
            ("event_rate_three_way", &w.event_rate_three_way),
            ("count_window_sizes", &w.count_window_sizes),
            ("time_window_sizes", &w.time_window_sizes),
        ];
        for (name, l) in lists {
            if l.is_empty() || l.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Config(format!("gen.workload.{name} must be a non-empty list of positive values")));
            }
        }
        if w.tuple_width.0 == 0 || w.tuple_width.0 > w.tuple_width.1 {
            return Err(Error::Config("gen.workload.tuple_width must be a non-empty range of positive widths".into()));
        }
        if !(0.0 < w.slide_fraction.0 && w.slide_fraction.0 <= w.slide_fraction.1 && w.slide_fraction.1 < 1.0) {
            return Err(Error::Config("gen.workload.slide_fraction must satisfy 0 < lo <= hi < 1".into()));
        }
        if w.agg_functions.is_empty() {
            return Err(Error::Config("gen.workload.agg_functions must not be empty".into()));
        }
        Ok(())
    }
}

/// RNG for item `index` of a corpus seeded with `seed`; independent of how
/// many other items are generated or in which order.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Incremental query construction; ids are assigned per operator kind.
#[derive(Clone, Debug, Default)]
pub struct QueryBuilder {
    query: QueryGraph,
    counts: [usize; 4],
}

impl QueryBuilder {
    pub fn new() -> Self {
        QueryBuilder::default()
    }

    fn add(&mut self, prefix: &str, slot: usize, features: OperatorFeatures, inputs: &[&OpId]) -> OpId {
        let id = OpId(format!("{prefix}{}", self.counts[slot]));
        self.counts[slot] += 1;
        self.query.operators.push(OperatorNode::new(id.clone(), features));
        for &input in inputs {
            self.query.edges.push(Edge(input.clone(), id.clone()));
        }
        id
    }

    fn width_of(&self, id: &OpId) -> f64 {
        self.query.operator(id).map_or(0.0, |op| op.features.tuple_width_out())
    }

    pub fn source(&mut self, event_rate: f64, data_types: Vec<DataType>) -> OpId {
        self.add("source", 0, OperatorFeatures::Source(SourceFeatures { event_rate, data_types }), &[])
    }

    pub fn filter(&mut self, input: &OpId, function: FilterFunction, literal_type: DataType, selectivity: f64) -> OpId {
        let w = self.width_of(input);
        let f = FilterFeatures { tuple_width_in: w, tuple_width_out: w, function, literal_type, selectivity };
        self.add("filter", 1, OperatorFeatures::Filter(f), &[input])
    }

    pub fn aggregation(
        &mut self,
        input: &OpId,
        function: AggFunction,
        group_by: GroupByType,
        agg_type: DataType,
        selectivity: f64,
        window: WindowSpec,
    ) -> OpId {
        let w = self.width_of(input);
        let out = if group_by == GroupByType::None { 1.0 } else { 2.0 };
        let a = AggregationFeatures {
            tuple_width_in: w,
            tuple_width_out: out,
            function,
            group_by,
            agg_type,
            selectivity,
            window,
        };
        self.add("agg", 2, OperatorFeatures::WindowedAggregation(a), &[input])
    }

    pub fn join(&mut self, left: &OpId, right: &OpId, key_type: DataType, selectivity: f64, window: WindowSpec) -> OpId {
        let (wl, wr) = (self.width_of(left), self.width_of(right));
        let j = JoinFeatures { tuple_width_in: (wl + wr) / 2.0, tuple_width_out: wl + wr, key_type, selectivity, window };
        self.add("join", 3, OperatorFeatures::WindowedJoin(j), &[left, right])
    }

    pub fn sink(mut self, input: &OpId) -> QueryGraph {
        let w = self.width_of(input);
        let id = OpId("sink".into());
        self.query
            .operators
            .push(OperatorNode::new(id.clone(), OperatorFeatures::Sink(SinkFeatures { tuple_width_in: w, tuple_width_out: w })));
        self.query.edges.push(Edge(input.clone(), id));
        self.query
    }
}

fn pick<'a, T, R: Rng>(values: &'a [T], rng: &mut R) -> &'a T {
    values.choose(rng).expect("validated non-empty list")
}

/// Weights are relative; they need not sum to one.
fn pick_weighted<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn pick_category<T: Category, R: Rng>(rng: &mut R) -> T {
    *pick(T::ALL, rng)
}

fn sample_window<R: Rng>(w: &WorkloadRanges, rng: &mut R) -> WindowSpec {
    let window_type: WindowType = pick_category(rng);
    let policy: WindowPolicy = pick_category(rng);
    let size = match policy {
        WindowPolicy::Count => *pick(&w.count_window_sizes, rng),
        WindowPolicy::Time => *pick(&w.time_window_sizes, rng),
    };
    let slide = (window_type == WindowType::Sliding)
        .then(|| size * rng.gen_range(w.slide_fraction.0..=w.slide_fraction.1));
    WindowSpec { window_type, policy, size, slide }
}

struct Sampler<'a, R> {
    cfg: &'a GenConfig,
    rng: &'a mut R,
    b: QueryBuilder,
}

impl<R: Rng> Sampler<'_, R> {
    fn source(&mut self, family: QueryFamily) -> OpId {
        let rate = *pick(self.cfg.workload.event_rates(family), self.rng);
        let (lo, hi) = self.cfg.workload.tuple_width;
        let width = self.rng.gen_range(lo..=hi);
        let types = (0..width).map(|_| pick_category(self.rng)).collect();
        self.b.source(rate, types)
    }

    fn filter(&mut self, input: &OpId) -> OpId {
        let function: FilterFunction = pick_category(self.rng);
        let literal = match function {
            FilterFunction::StartsWith | FilterFunction::EndsWith => DataType::String,
            _ => pick_category(self.rng),
        };
        let sel = self.rng.gen::<f64>();
        self.b.filter(input, function, literal, sel)
    }

    fn aggregation(&mut self, input: &OpId) -> OpId {
        let function = *pick(&self.cfg.workload.agg_functions, self.rng);
        let group_by: GroupByType = pick_category(self.rng);
        let agg_type: DataType = pick_category(self.rng);
        let sel = self.rng.gen::<f64>();
        let window = sample_window(&self.cfg.workload, self.rng);
        self.b.aggregation(input, function, group_by, agg_type, sel, window)
    }

    fn join(&mut self, left: &OpId, right: &OpId) -> OpId {
        let key: DataType = pick_category(self.rng);
        let sel = self.rng.gen::<f64>();
        let window = sample_window(&self.cfg.workload, self.rng);
        self.b.join(left, right, key, sel, window)
    }

    /// Applies a filter if `slot` was selected.
    fn maybe_filter(&mut self, input: OpId, chosen: &[usize], slot: usize) -> OpId {
        if chosen.contains(&slot) {
            self.filter(&input)
        } else {
            input
        }
    }
}

/// Draws the number of filters and the non-adjacent slots they occupy.
fn choose_filter_slots<R: Rng>(cfg: &GenConfig, slots: usize, rng: &mut R) -> Vec<usize> {
    let wanted = pick_weighted(&cfg.filter_counts, rng) + 1;
    let n = wanted.min(slots);
    let mut all: Vec<usize> = (0..slots).collect();
    all.shuffle(rng);
    all.truncate(n);
    all.sort_unstable();
    all
}

/// Draws a query of the given family. Filters never follow each other
/// directly; aggregation is optional.
pub fn sample_query_of<R: Rng>(cfg: &GenConfig, family: QueryFamily, rng: &mut R) -> QueryGraph {
    let with_agg = rng.gen::<f64>() < cfg.aggregation_probability;
    let mut s = Sampler { cfg, rng, b: QueryBuilder::new() };
    match family {
        QueryFamily::Linear => {
            // slots: after source, after aggregation
            let slots = if with_agg { 2 } else { 1 };
            let chosen = choose_filter_slots(cfg, slots, s.rng);
            let src = s.source(family);
            let mut cur = s.maybe_filter(src, &chosen, 0);
            if with_agg {
                cur = s.aggregation(&cur);
                cur = s.maybe_filter(cur, &chosen, 1);
            }
            s.b.sink(&cur)
        }
        QueryFamily::TwoWayJoin => {
            // slots: after each source, after the join, after aggregation
            let slots = if with_agg { 4 } else { 3 };
            let chosen = choose_filter_slots(cfg, slots, s.rng);
            let l = s.source(family);
            let l = s.maybe_filter(l, &chosen, 0);
            let r = s.source(family);
            let r = s.maybe_filter(r, &chosen, 1);
            let j = s.join(&l, &r);
            let mut cur = s.maybe_filter(j, &chosen, 2);
            if with_agg {
                cur = s.aggregation(&cur);
                cur = s.maybe_filter(cur, &chosen, 3);
            }
            s.b.sink(&cur)
        }
        QueryFamily::ThreeWayJoin => {
            // slots: after each of the three sources, after each join, after aggregation
            let slots = if with_agg { 6 } else { 5 };
            let chosen = choose_filter_slots(cfg, slots, s.rng);
            let a = s.source(family);
            let a = s.maybe_filter(a, &chosen, 0);
            let b = s.source(family);
            let b = s.maybe_filter(b, &chosen, 1);
            let c = s.source(family);
            let c = s.maybe_filter(c, &chosen, 2);
            let j1 = s.join(&a, &b);
            let j1 = s.maybe_filter(j1, &chosen, 3);
            let j2 = s.join(&j1, &c);
            let mut cur = s.maybe_filter(j2, &chosen, 4);
            if with_agg {
                cur = s.aggregation(&cur);
                cur = s.maybe_filter(cur, &chosen, 5);
            }
            s.b.sink(&cur)
        }
    }
}

pub fn sample_family<R: Rng>(cfg: &GenConfig, rng: &mut R) -> QueryFamily {
    QueryFamily::ALL[pick_weighted(&cfg.family_mix, rng)]
}

pub fn sample_query<R: Rng>(cfg: &GenConfig, rng: &mut R) -> QueryGraph {
    let family = sample_family(cfg, rng);
    sample_query_of(cfg, family, rng)
}

/// Linear query whose filter stage is a chain of `k` filters.
pub fn sample_filter_chain<R: Rng>(cfg: &GenConfig, k: usize, rng: &mut R) -> QueryGraph {
    let with_agg = rng.gen::<f64>() < cfg.aggregation_probability;
    let mut s = Sampler { cfg, rng, b: QueryBuilder::new() };
    let mut cur = s.source(QueryFamily::Linear);
    for _ in 0..k {
        cur = s.filter(&cur);
    }
    if with_agg {
        cur = s.aggregation(&cur);
    }
    s.b.sink(&cur)
}

pub fn sample_hardware<R: Rng>(cfg: &GenConfig, n: usize, rng: &mut R) -> Vec<HardwareNode> {
    let h = &cfg.hardware;
    (0..n)
        .map(|i| HardwareNode {
            id: HostId(format!("host{i}")),
            cpu: *pick(&h.cpu, rng),
            ram: *pick(&h.ram, rng),
            net_bandwidth: *pick(&h.bandwidth, rng),
            net_latency: *pick(&h.latency, rng),
        })
        .collect()
}

/// What kind of query an item generator draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Workload {
    /// Family drawn from the configured mix.
    Mixed,
    Family { family: QueryFamily },
    FilterChain { filters: usize },
}

/// One generated item before labeling.
#[derive(Clone, Debug)]
pub struct GeneratedItem {
    pub family: QueryFamily,
    pub inventory: Vec<HardwareNode>,
    pub graph: JointGraph,
}

/// Generates item `index` of a corpus: query, inventory and one random
/// rule-satisfying placement.
pub fn generate_item(cfg: &GenConfig, workload: Workload, index: u64) -> Result<GeneratedItem> {
    let mut rng = item_rng(cfg.seed, index);
    let (family, q) = match workload {
        Workload::Mixed => {
            let family = sample_family(cfg, &mut rng);
            (family, sample_query_of(cfg, family, &mut rng))
        }
        Workload::Family { family } => (family, sample_query_of(cfg, family, &mut rng)),
        Workload::FilterChain { filters } => (QueryFamily::Linear, sample_filter_chain(cfg, filters, &mut rng)),
    };
    let n_hosts = cfg.hosts_per_query.unwrap_or(q.operators.len());
    let inventory = sample_hardware(cfg, n_hosts, &mut rng);
    let placement = enumerate_candidates(&q, &inventory, 1, &cfg.bins, &mut rng)?.remove(0);
    let graph = build_joint_graph(&q, &inventory, &placement)?;
    Ok(GeneratedItem { family, inventory, graph })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::graph::{validate_query, OperatorKind};

    fn query_of(cfg: &GenConfig, workload: Workload, index: u64) -> (QueryFamily, QueryGraph) {
        let item = generate_item(cfg, workload, index).unwrap();
        (item.family, item.graph.query())
    }

    #[test]
    fn family_frequencies_follow_the_mix() {
        let cfg = GenConfig::default();
        let n = 3000;
        let mut counts = [0usize; 3];
        let mut with_agg = 0;
        for i in 0..n {
            let (family, q) = query_of(&cfg, Workload::Mixed, i);
            counts[QueryFamily::ALL.iter().position(|f| *f == family).unwrap()] += 1;
            with_agg += usize::from(q.count(OperatorKind::WindowedAggregation) > 0);
        }
        for (c, w) in counts.iter().zip(cfg.family_mix) {
            // four standard errors of a binomial share
            let p = *c as f64 / n as f64;
            assert!((p - w).abs() < 4.0 * (w * (1.0 - w) / n as f64).sqrt(), "share {p} vs {w}");
        }
        let p = with_agg as f64 / n as f64;
        assert!((p - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn families_have_their_shape() {
        let cfg = GenConfig::default();
        for family in QueryFamily::ALL {
            let joins = QueryFamily::ALL.iter().position(|f| *f == family).unwrap();
            for i in 0..100 {
                let (f, q) = query_of(&cfg, Workload::Family { family }, i);
                assert_eq!(f, family);
                assert!(validate_query(&q).is_empty());
                assert_eq!(q.count(OperatorKind::WindowedJoin), joins);
                assert_eq!(q.count(OperatorKind::Source), joins + 1);
                assert!(q.count(OperatorKind::WindowedAggregation) <= 1);
                let filters = q.count(OperatorKind::Filter);
                assert!((1..=4).contains(&filters));
                for Edge(a, b) in &q.edges {
                    let both = [a, b].map(|id| q.operator(id).unwrap().kind() == OperatorKind::Filter);
                    assert!(!(both[0] && both[1]), "adjacent filters in {q:?}");
                }
            }
        }
    }

    #[test]
    fn filter_chains_have_the_requested_length() {
        let cfg = GenConfig::default();
        for k in 1..=5 {
            for i in 0..20 {
                let (f, q) = query_of(&cfg, Workload::FilterChain { filters: k }, i);
                assert_eq!(f, QueryFamily::Linear);
                assert_eq!(q.count(OperatorKind::Filter), k);
                assert!(validate_query(&q).is_empty());
            }
        }
    }

    #[test]
    fn items_do_not_depend_on_generation_order() {
        let cfg = GenConfig { seed: 9, ..GenConfig::default() };
        let late = generate_item(&cfg, Workload::Mixed, 41).unwrap().graph;
        for i in 0..41 {
            generate_item(&cfg, Workload::Mixed, i).unwrap();
        }
        assert_eq!(generate_item(&cfg, Workload::Mixed, 41).unwrap().graph, late);
        let other = GenConfig { seed: 10, ..cfg };
        assert_ne!(generate_item(&other, Workload::Mixed, 41).unwrap().graph, late);
    }

    #[test]
    fn presets() {
        assert_eq!(HardwareRanges::preset("interpolation"), Some(HardwareRanges::interpolation()));
        let r = HardwareRanges::preset("stronger-ram-eval").unwrap();
        assert_eq!(r.ram, [24000.0, 32000.0]);
        assert_eq!(r.cpu, HardwareRanges::default().cpu);
        let r = HardwareRanges::preset("weaker-latency-train").unwrap();
        assert!(!r.latency.contains(&160.0));
        for bad in ["stronger", "stronger-ram", "stronger-ram-test", "louder-ram-eval", "stronger-ram-eval-x"] {
            assert_eq!(HardwareRanges::preset(bad), None, "{bad}");
        }
    }

    #[test]
    fn extrapolation_values_leave_the_training_range() {
        for dim in HardwareDim::ALL {
            for kind in [Extrapolation::Stronger, Extrapolation::Weaker] {
                let (train, eval) = HardwareRanges::extrapolation(dim, kind);
                assert!(eval.iter().all(|v| !train.contains(v)));
            }
        }
        let interp = HardwareRanges::interpolation();
        let base = HardwareRanges::default();
        for dim in HardwareDim::ALL {
            let (lo, hi) = (base.get(dim)[0], *base.get(dim).last().unwrap());
            assert!(interp.get(dim).iter().all(|v| *v > lo && *v < hi && !base.get(dim).contains(v)));
        }
    }

    #[test]
    fn validation() {
        assert!(GenConfig::default().validate().is_ok());
        assert!(GenConfig { family_mix: [0.0; 3], ..GenConfig::default() }.validate().is_err());
        assert!(GenConfig { aggregation_probability: 1.5, ..GenConfig::default() }.validate().is_err());
        assert!(GenConfig { hosts_per_query: Some(0), ..GenConfig::default() }.validate().is_err());
        let mut cfg = GenConfig::default();
        cfg.hardware.cpu.clear();
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn sampled_values_come_from_the_configured_ranges(seed in any::<u64>(), index in 0u64..10_000) {
            let cfg = GenConfig { seed, ..GenConfig::default() };
            let item = generate_item(&cfg, Workload::Mixed, index).unwrap();
            prop_assert_eq!(item.inventory.len(), item.graph.operators().len());
            for h in &item.inventory {
                prop_assert!(cfg.hardware.cpu.contains(&h.cpu) && cfg.hardware.ram.contains(&h.ram));
                prop_assert!(cfg.hardware.bandwidth.contains(&h.net_bandwidth) && cfg.hardware.latency.contains(&h.net_latency));
            }
            for op in item.graph.operators() {
                if let Some(s) = op.features.selectivity() {
                    prop_assert!((0.0..=1.0).contains(&s));
                }
                prop_assert!(op.features.violations().is_empty());
            }
        }
    }
}
