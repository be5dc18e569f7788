//! Deterministic analytic execution model that labels placed queries.
//!
//! Rates are propagated through the operator tree, every operator gets a
//! service capacity from its host's CPU share, and queueing, windowing and
//! network terms are summed along source-to-sink paths. Bottlenecks throttle
//! the flow; the throttled share of each source stream is its backpressure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{OperatorFeatures, WindowPolicy, WindowSpec};
use crate::graph::{CostVector, JointGraph, OperatorKind};

/// Work units per tuple for each operator kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpCosts {
    pub source: f64,
    pub filter: f64,
    pub aggregation: f64,
    pub join: f64,
    pub sink: f64,
}

impl Default for OpCosts {
    fn default() -> Self {
        OpCosts { source: 0.2, filter: 0.5, aggregation: 2.0, join: 4.0, sink: 0.2 }
    }
}

impl OpCosts {
    pub fn of(&self, kind: OperatorKind) -> f64 {
        match kind {
            OperatorKind::Source => self.source,
            OperatorKind::Filter => self.filter,
            OperatorKind::WindowedAggregation => self.aggregation,
            OperatorKind::WindowedJoin => self.join,
            OperatorKind::Sink => self.sink,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Work units per second delivered by 100% of a reference core.
    pub work_unit_rate: f64,
    pub op_cost: OpCosts,
    pub bytes_per_field: f64,
    /// Multiplier on raw window state when checking it against host RAM.
    pub state_safety_factor: f64,
    /// Length of the observed execution in seconds.
    pub exec_seconds: f64,
    /// Sigma of the multiplicative lognormal noise on T, L_p and L_e.
    pub noise_sigma: f64,
    pub rng_seed: u64,
    /// In-flight tuples an operator holds before upstream is throttled; bounds
    /// the residence time of a saturated operator to `queue_capacity / mu`.
    pub queue_capacity: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            work_unit_rate: 10_000.0,
            op_cost: OpCosts::default(),
            bytes_per_field: 8.0,
            state_safety_factor: 4.0,
            exec_seconds: 240.0,
            noise_sigma: 0.1,
            rng_seed: 0,
            queue_capacity: 25_000.0,
        }
    }
}

impl SimConfig {
    pub fn noiseless() -> Self {
        SimConfig { noise_sigma: 0.0, ..SimConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.op_cost;
        let positive = [
            ("work_unit_rate", self.work_unit_rate),
            ("op_cost.source", c.source),
            ("op_cost.filter", c.filter),
            ("op_cost.aggregation", c.aggregation),
            ("op_cost.join", c.join),
            ("op_cost.sink", c.sink),
            ("bytes_per_field", self.bytes_per_field),
            ("state_safety_factor", self.state_safety_factor),
            ("exec_seconds", self.exec_seconds),
            ("queue_capacity", self.queue_capacity),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("sim.{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("sim.noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorFlow {
    /// Arrival rate from each dataflow predecessor, in predecessor order.
    pub input_rates: Vec<f64>,
    /// Total arrival rate (tuples/s).
    pub input_rate: f64,
    pub output_rate: f64,
    /// Time span covered by the operator's window, if windowed.
    pub window_seconds: Option<f64>,
    /// Service capacity mu (tuples/s); zero until capacities are assigned.
    pub capacity: f64,
    pub residence_ms: f64,
    pub window_delay_ms: f64,
    /// Raw window state in bytes (before the safety factor).
    pub state_bytes: f64,
    pub saturated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeFlow {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
    pub bytes_per_sec: f64,
    pub crossing: bool,
    pub latency_ms: f64,
    pub saturated: bool,
}

/// Per-operator and per-edge flow quantities, indexed like the joint graph.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowAnnotation {
    pub operators: Vec<OperatorFlow>,
    pub edges: Vec<EdgeFlow>,
}

/// Time span of a window given the arrival rates of its input streams.
fn window_seconds(w: &WindowSpec, rates: &[f64]) -> f64 {
    match w.policy {
        WindowPolicy::Time => w.size,
        WindowPolicy::Count => {
            let fastest = rates.iter().copied().fold(0.0, f64::max);
            if fastest > 0.0 {
                w.size / fastest
            } else {
                f64::INFINITY
            }
        }
    }
}

/// Output rate of an operator given its per-input arrival rates.
fn output_rate(features: &OperatorFeatures, inputs: &[f64]) -> f64 {
    let total: f64 = inputs.iter().sum();
    match features {
        OperatorFeatures::Source(s) => s.event_rate,
        OperatorFeatures::Filter(f) => f.selectivity * total,
        OperatorFeatures::WindowedAggregation(a) => a.selectivity * total,
        OperatorFeatures::WindowedJoin(j) => {
            let (l, r) = (inputs[0], inputs[1]);
            if l <= 0.0 || r <= 0.0 {
                return 0.0;
            }
            j.selectivity * l * r * window_seconds(&j.window, inputs)
        }
        OperatorFeatures::Sink(_) => total,
    }
}

/// Nominal (unthrottled) rates through the operator tree.
pub fn propagate_rates(g: &JointGraph, _cfg: &SimConfig) -> FlowAnnotation {
    let ops = g.operators();
    let mut flows: Vec<OperatorFlow> = Vec::with_capacity(ops.len());
    for (i, op) in ops.iter().enumerate() {
        let input_rates: Vec<f64> = match &op.features {
            OperatorFeatures::Source(s) => vec![s.event_rate],
            _ => g.predecessors(i).iter().map(|&p| flows[p].output_rate).collect(),
        };
        let input_rate = input_rates.iter().sum();
        let output_rate = output_rate(&op.features, &input_rates);
        let window_seconds = op.features.window().map(|w| window_seconds(w, &input_rates));
        flows.push(OperatorFlow { input_rates, input_rate, output_rate, window_seconds, ..Default::default() });
    }
    let edges = g
        .dataflow_edges()
        .iter()
        .map(|&(a, b)| EdgeFlow {
            from: a,
            to: b,
            rate: flows[a].output_rate,
            bytes_per_sec: 0.0,
            crossing: g.host_of(a) != g.host_of(b),
            latency_ms: 0.0,
            saturated: false,
        })
        .collect();
    FlowAnnotation { operators: flows, edges }
}

/// Residence time in ms of an M/M/1-style server, bounded by a full queue.
pub fn residence_ms(arrival: f64, capacity: f64, queue_capacity: f64) -> f64 {
    let full = queue_capacity / capacity;
    if arrival < capacity {
        1000.0 * (1.0 / (capacity - arrival)).min(full)
    } else {
        1000.0 * full
    }
}

/// Link capacity in tuples/s of a host's outgoing network for a given tuple width.
fn link_capacity(bandwidth_mbit: f64, tuple_width: f64, cfg: &SimConfig) -> f64 {
    bandwidth_mbit * 1e6 / 8.0 / (tuple_width * cfg.bytes_per_field)
}

/// Assigns capacities, residence times, window delays, state sizes and
/// network terms to a rate annotation.
pub fn capacity_and_latency(g: &JointGraph, mut flows: FlowAnnotation, cfg: &SimConfig) -> FlowAnnotation {
    let ops = g.operators();
    let hosts = g.hosts();
    for (i, op) in ops.iter().enumerate() {
        let host = &hosts[g.host_of(i)];
        let share = host.cpu / 100.0 / g.operators_on(g.host_of(i)).len() as f64;
        let capacity = share * cfg.work_unit_rate / cfg.op_cost.of(op.kind());
        let f = &mut flows.operators[i];
        f.capacity = capacity;
        f.saturated = f.input_rate >= capacity;
        f.residence_ms = residence_ms(f.input_rate, capacity, cfg.queue_capacity);
        f.window_delay_ms = f.window_seconds.map_or(0.0, |w| w / 2.0 * 1000.0);
        f.state_bytes = match op.features.window() {
            Some(w) => {
                let tuples: f64 = match w.policy {
                    WindowPolicy::Count => w.size * f.input_rates.len() as f64,
                    WindowPolicy::Time => f.input_rates.iter().map(|r| w.size * r).sum(),
                };
                tuples * op.features.tuple_width_in() * cfg.bytes_per_field
            }
            None => 0.0,
        };
    }
    for e in &mut flows.edges {
        let width = ops[e.from].features.tuple_width_out();
        e.bytes_per_sec = e.rate * width * cfg.bytes_per_field;
        if e.crossing {
            let sender = &hosts[g.host_of(e.from)];
            e.latency_ms = sender.net_latency;
            e.saturated = e.rate > link_capacity(sender.net_bandwidth, width, cfg);
        }
    }
    flows
}

/// Everything the oracle derives before noise is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub flows: FlowAnnotation,
    /// Sink output rate under throttled flows.
    pub throughput: f64,
    pub proc_latency_ms: f64,
    pub e2e_latency_ms: f64,
    /// Per-source backpressure rate (source index, tuples/s).
    pub source_backpressure: Vec<(usize, f64)>,
    pub backpressure_rate: f64,
    pub memory_ok: bool,
    /// Expected number of tuples reaching the sink during the run.
    pub expected_sink_tuples: f64,
    pub success: bool,
}

/// Noise-free analysis of a placed query.
pub fn analyze(g: &JointGraph, cfg: &SimConfig) -> SimOutcome {
    let flows = capacity_and_latency(g, propagate_rates(g, cfg), cfg);
    let ops = g.operators();
    let hosts = g.hosts();
    let n = ops.len();

    let mut host_state = vec![0.0; hosts.len()];
    for (i, f) in flows.operators.iter().enumerate() {
        host_state[g.host_of(i)] += cfg.state_safety_factor * f.state_bytes;
    }
    let memory_ok = host_state.iter().zip(hosts).all(|(bytes, h)| *bytes <= h.ram * 1_048_576.0);

    // edge lookup by (from, to)
    let edge_of = |a: usize, b: usize| -> &EdgeFlow {
        flows.edges.iter().find(|e| e.from == a && e.to == b).expect("edge exists")
    };

    // throttled pass in topological order
    let mut processed_out = vec![0.0; n];
    let mut op_throttle = vec![1.0; n];
    let mut edge_throttle = vec![1.0; n]; // throttle on the edge leaving operator i
    for (i, op) in ops.iter().enumerate() {
        let arrivals: Vec<f64> = match &op.features {
            OperatorFeatures::Source(s) => vec![s.event_rate],
            _ => g
                .predecessors(i)
                .iter()
                .map(|&p| {
                    let sent = processed_out[p];
                    let e = edge_of(p, i);
                    if !e.crossing {
                        return sent;
                    }
                    let sender = &hosts[g.host_of(p)];
                    let cap = link_capacity(sender.net_bandwidth, ops[p].features.tuple_width_out(), cfg);
                    if sent > cap {
                        edge_throttle[p] = cap / sent;
                        cap
                    } else {
                        sent
                    }
                })
                .collect(),
        };
        let total: f64 = arrivals.iter().sum();
        let capacity = flows.operators[i].capacity;
        let theta = if total > capacity { capacity / total } else { 1.0 };
        op_throttle[i] = theta;
        let processed: Vec<f64> = arrivals.iter().map(|a| a * theta).collect();
        processed_out[i] = output_rate(&op.features, &processed);
    }
    let sink = g.sink();
    let throughput = processed_out[sink];

    // fraction of each operator's input that survives every throttle downstream
    let mut downstream = vec![1.0; n];
    for i in (0..n).rev() {
        downstream[i] = op_throttle[i]
            * match g.successor(i) {
                Some(s) => edge_throttle[i] * downstream[s],
                None => 1.0,
            };
    }
    let mut source_backpressure = Vec::new();
    let mut total_source_rate = 0.0;
    for (i, op) in ops.iter().enumerate() {
        if let OperatorFeatures::Source(s) = &op.features {
            total_source_rate += s.event_rate;
            source_backpressure.push((i, s.event_rate * (1.0 - downstream[i])));
        }
    }
    let backpressure_rate: f64 = source_backpressure.iter().map(|(_, b)| b).sum();

    // longest path latency and window fill time
    let mut latency = vec![0.0; n];
    let mut fill = vec![0.0; n];
    for i in 0..n {
        let f = &flows.operators[i];
        let (mut upstream_latency, mut upstream_fill) = (0.0f64, 0.0f64);
        for &p in g.predecessors(i) {
            upstream_latency = upstream_latency.max(latency[p] + edge_of(p, i).latency_ms);
            upstream_fill = upstream_fill.max(fill[p]);
        }
        latency[i] = upstream_latency + f.residence_ms + f.window_delay_ms;
        fill[i] = upstream_fill + f.window_seconds.unwrap_or(0.0);
    }
    let proc_latency_ms = latency[sink];
    let e2e_latency_ms = if backpressure_rate > 0.0 {
        proc_latency_ms + 1000.0 * (cfg.exec_seconds / 2.0) * (backpressure_rate / total_source_rate)
    } else {
        proc_latency_ms
    };

    let active_seconds = (cfg.exec_seconds - fill[sink]).max(0.0);
    let expected_sink_tuples = throughput * active_seconds;
    let success = memory_ok && expected_sink_tuples >= 1.0;

    SimOutcome {
        flows,
        throughput,
        proc_latency_ms,
        e2e_latency_ms,
        source_backpressure,
        backpressure_rate,
        memory_ok,
        expected_sink_tuples,
        success,
    }
}

/// Labels a placed query with its five cost metrics.
pub fn simulate(g: &JointGraph, cfg: &SimConfig) -> CostVector {
    let outcome = analyze(g, cfg);
    let backpressure = outcome.backpressure_rate > 0.0;
    if !outcome.success {
        return CostVector::failed(backpressure);
    }
    let mut noise = [1.0; 3];
    if cfg.noise_sigma > 0.0 {
        let dist = LogNormal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        for m in &mut noise {
            *m = dist.sample(&mut rng);
        }
    }
    CostVector {
        throughput: outcome.throughput * noise[0],
        proc_latency: Some(outcome.proc_latency_ms * noise[1]),
        e2e_latency: Some(outcome.e2e_latency_ms * noise[2]),
        backpressure,
        success: true,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::features::{DataType, FilterFunction, WindowType};
    use crate::generate::{generate_item, GenConfig, QueryBuilder, Workload};
    use crate::graph::{build_joint_graph, HardwareNode, HostId, OpId, Placement, QueryGraph};

    fn host(id: &str, cpu: f64, ram: f64) -> HardwareNode {
        HardwareNode { id: HostId::from(id), cpu, ram, net_bandwidth: 10_000.0, net_latency: 2.0 }
    }

    /// Places the operators with the given ids on the given hosts; the rest go to `rest`.
    fn place(q: &QueryGraph, rest: &str, on: &[(&str, &str)]) -> Placement {
        q.operators
            .iter()
            .map(|op| {
                let h = on.iter().find(|(o, _)| OpId::from(*o) == op.id).map_or(rest, |(_, h)| *h);
                (op.id.clone(), HostId::from(h))
            })
            .collect()
    }

    fn filter_query(rate: f64, sel: f64) -> QueryGraph {
        let mut b = QueryBuilder::new();
        let s = b.source(rate, vec![DataType::Int; 4]);
        let f = b.filter(&s, FilterFunction::Lt, DataType::Int, sel);
        b.sink(&f)
    }

    fn index_of(g: &JointGraph, id: &str) -> usize {
        g.operators().iter().position(|o| o.id == OpId::from(id)).unwrap()
    }

    #[test]
    fn filter_scales_the_rate() {
        let q = filter_query(1000.0, 0.37);
        let g = build_joint_graph(&q, &[host("h", 800.0, 8000.0)], &place(&q, "h", &[])).unwrap();
        let flows = propagate_rates(&g, &SimConfig::noiseless());
        assert!((flows.operators[g.sink()].input_rate - 370.0).abs() < 1e-9);
    }

    #[test]
    fn aggregation_scales_the_rate() {
        let w = WindowSpec { window_type: WindowType::Tumbling, policy: WindowPolicy::Count, size: 64.0, slide: None };
        let mut b = QueryBuilder::new();
        let s = b.source(640.0, vec![DataType::Int; 2]);
        let a = b.aggregation(&s, crate::features::AggFunction::Sum, crate::features::GroupByType::None, DataType::Int, 1.0 / 64.0, w);
        let q = b.sink(&a);
        let g = build_joint_graph(&q, &[host("h", 800.0, 8000.0)], &place(&q, "h", &[])).unwrap();
        let flows = propagate_rates(&g, &SimConfig::noiseless());
        assert!((flows.operators[index_of(&g, "agg0")].output_rate - 10.0).abs() < 1e-12);
    }

    fn join_query(rate: f64, sel: f64, window: WindowSpec, width: usize) -> QueryGraph {
        let mut b = QueryBuilder::new();
        let l = b.source(rate, vec![DataType::Int; width]);
        let r = b.source(rate, vec![DataType::Int; width]);
        let j = b.join(&l, &r, DataType::Int, sel, window);
        b.sink(&j)
    }

    #[test]
    fn join_rate_matches_window_enumeration() {
        let (rate, sel, secs) = (100.0, 0.01, 2.0);
        // one tumbling window: every left tuple meets every right tuple once
        let per_window = (rate * secs) as usize;
        let mut pairs = 0usize;
        for _left in 0..per_window {
            for _right in 0..per_window {
                pairs += 1;
            }
        }
        let expected = sel * pairs as f64 / secs;
        assert_eq!(expected, 200.0);

        let w = WindowSpec { window_type: WindowType::Tumbling, policy: WindowPolicy::Time, size: secs, slide: None };
        let q = join_query(rate, sel, w, 3);
        let g = build_joint_graph(&q, &[host("h", 800.0, 8000.0)], &place(&q, "h", &[])).unwrap();
        let flows = propagate_rates(&g, &SimConfig::noiseless());
        assert!((flows.operators[index_of(&g, "join0")].output_rate - expected).abs() < 1e-9);
    }

    #[test]
    fn lone_filter_capacity_and_residence() {
        let q = filter_query(19_999.0, 0.5);
        let hw = [host("a", 800.0, 8000.0), host("b", 100.0, 8000.0)];
        let g = build_joint_graph(&q, &hw, &place(&q, "a", &[("filter0", "b")])).unwrap();
        let cfg = SimConfig::noiseless();
        let flows = capacity_and_latency(&g, propagate_rates(&g, &cfg), &cfg);
        let f = &flows.operators[index_of(&g, "filter0")];
        assert_eq!(f.capacity, 20_000.0);
        assert!((f.residence_ms - 1000.0).abs() < 1e-6);
        assert_eq!(residence_ms(19_999.0, 20_000.0, cfg.queue_capacity), 1000.0);
    }

    #[test]
    fn colocated_filters_share_the_host() {
        let mut b = QueryBuilder::new();
        let s = b.source(100.0, vec![DataType::Int; 2]);
        let f1 = b.filter(&s, FilterFunction::Lt, DataType::Int, 0.5);
        let f2 = b.filter(&f1, FilterFunction::Gt, DataType::Int, 0.5);
        let q = b.sink(&f2);
        let hw = [host("a", 800.0, 8000.0), host("b", 200.0, 8000.0)];
        let g = build_joint_graph(&q, &hw, &place(&q, "a", &[("filter0", "b"), ("filter1", "b")])).unwrap();
        let cfg = SimConfig::noiseless();
        let flows = capacity_and_latency(&g, propagate_rates(&g, &cfg), &cfg);
        assert_eq!(flows.operators[index_of(&g, "filter0")].capacity, 20_000.0);
        assert_eq!(flows.operators[index_of(&g, "filter1")].capacity, 20_000.0);
    }

    #[test]
    fn unsaturated_query_reports_the_analytic_rate() {
        let q = filter_query(1000.0, 0.37);
        let g = build_joint_graph(&q, &[host("h", 800.0, 8000.0)], &place(&q, "h", &[])).unwrap();
        let c = simulate(&g, &SimConfig::noiseless());
        assert!(c.success && !c.backpressure);
        assert!((c.throughput - 370.0).abs() < 1e-9);
        assert_eq!(c.proc_latency, c.e2e_latency);
    }

    #[test]
    fn overloaded_filter_backpressures_half_the_source() {
        // filter on a 10% host: mu = 0.1 * 10_000 / 0.5 = 2000, source at twice that
        let q = filter_query(4000.0, 0.5);
        let hw = [host("a", 800.0, 8000.0), host("b", 10.0, 8000.0)];
        let g = build_joint_graph(&q, &hw, &place(&q, "a", &[("filter0", "b")])).unwrap();
        let cfg = SimConfig::noiseless();
        let out = analyze(&g, &cfg);
        assert!((out.backpressure_rate - 2000.0).abs() < 1e-9);
        let c = simulate(&g, &cfg);
        assert!(c.backpressure);
        assert!(c.e2e_latency.unwrap() > c.proc_latency.unwrap());
    }

    #[test]
    fn join_state_against_host_memory() {
        let w = WindowSpec { window_type: WindowType::Tumbling, policy: WindowPolicy::Count, size: 640.0, slide: None };
        let q = join_query(1000.0, 0.001, w, 10);
        let cfg = SimConfig::noiseless();
        let state = |ram: f64| {
            let hw = [host("a", 800.0, 8000.0), host("j", 800.0, ram)];
            let g = build_joint_graph(&q, &hw, &place(&q, "a", &[("join0", "j")])).unwrap();
            let out = analyze(&g, &cfg);
            let raw = out.flows.operators[index_of(&g, "join0")].state_bytes;
            (raw * cfg.state_safety_factor, out.memory_ok, simulate(&g, &cfg).success)
        };
        let (bytes, ok, success) = state(1024.0);
        assert_eq!(bytes, 409_600.0);
        assert!(ok && success);
        // 0.3 MB is 314,572.8 bytes
        let (_, ok, success) = state(0.3);
        assert!(!ok && !success);
    }

    #[test]
    fn single_host_has_no_network_terms() {
        let q = filter_query(1000.0, 0.5);
        let g = build_joint_graph(&q, &[host("h", 800.0, 8000.0)], &place(&q, "h", &[])).unwrap();
        let cfg = SimConfig::noiseless();
        let flows = capacity_and_latency(&g, propagate_rates(&g, &cfg), &cfg);
        assert!(flows.edges.iter().all(|e| !e.crossing && e.latency_ms == 0.0));
        let with_network = build_joint_graph(&q, &[host("h", 800.0, 8000.0), host("x", 800.0, 8000.0)], &place(&q, "h", &[("sink", "x")])).unwrap();
        let (a, b) = (analyze(&g, &cfg), analyze(&with_network, &cfg));
        // the sink is the last operator on a linear chain, so latency is a plain sum
        let path = |o: &SimOutcome| o.flows.operators.iter().map(|f| f.residence_ms + f.window_delay_ms).sum::<f64>();
        assert!((a.proc_latency_ms - path(&a)).abs() < 1e-9);
        assert!((b.proc_latency_ms - path(&b) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        assert!(SimConfig { noise_sigma: -0.1, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { work_unit_rate: 0.0, ..SimConfig::default() }.validate().is_err());
    }

    fn item(seed: u64, index: u64) -> JointGraph {
        generate_item(&GenConfig { seed, ..GenConfig::default() }, Workload::Mixed, index).unwrap().graph
    }

    fn scale_cpu(g: &JointGraph, factor: f64) -> JointGraph {
        let hosts: Vec<HardwareNode> = g.hosts().iter().map(|h| HardwareNode { cpu: h.cpu * factor, ..h.clone() }).collect();
        build_joint_graph(&g.query(), &hosts, &g.placement()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn more_cpu_never_hurts(seed in 0u64..1000, index in 0u64..50, factor in 1.0f64..4.0) {
            let cfg = SimConfig::noiseless();
            let g = item(seed, index);
            let (a, b) = (simulate(&g, &cfg), simulate(&scale_cpu(&g, factor), &cfg));
            prop_assert!(b.throughput >= a.throughput * (1.0 - 1e-12));
            if let (Some(la), Some(lb)) = (a.proc_latency, b.proc_latency) {
                prop_assert!(lb <= la * (1.0 + 1e-12));
            }
        }

        #[test]
        fn labels_are_consistent(seed in 0u64..1000, index in 0u64..50, rng_seed in 0u64..1000) {
            let g = item(seed, index);
            let clean = simulate(&g, &SimConfig::noiseless());
            prop_assert!(clean.violations().is_empty());
            if !clean.backpressure && clean.success {
                prop_assert_eq!(clean.proc_latency, clean.e2e_latency);
            }
            let noisy_cfg = SimConfig { rng_seed, ..SimConfig::default() };
            let noisy = simulate(&g, &noisy_cfg);
            prop_assert_eq!(noisy.success, clean.success);
            prop_assert_eq!(noisy.backpressure, clean.backpressure);
            prop_assert_eq!(simulate(&g, &noisy_cfg), noisy);
        }
    }
}
