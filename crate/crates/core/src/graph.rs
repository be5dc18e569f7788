//! Queries, hardware, placements and the joint operator-resource graph.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{NodeRef, OperatorFeatures};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OpId(pub String);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HostId(pub String);

impl From<&str> for OpId {
    fn from(s: &str) -> Self {
        OpId(s.to_string())
    }
}

impl From<&str> for HostId {
    fn from(s: &str) -> Self {
        HostId(s.to_string())
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Source,
    Filter,
    WindowedAggregation,
    WindowedJoin,
    Sink,
}

impl OperatorKind {
    /// Number of incoming dataflow edges an operator of this kind must have.
    pub fn arity(self) -> usize {
        match self {
            OperatorKind::Source => 0,
            OperatorKind::Filter | OperatorKind::WindowedAggregation | OperatorKind::Sink => 1,
            OperatorKind::WindowedJoin => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Source => "source",
            OperatorKind::Filter => "filter",
            OperatorKind::WindowedAggregation => "aggregation",
            OperatorKind::WindowedJoin => "join",
            OperatorKind::Sink => "sink",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorNode {
    pub id: OpId,
    pub features: OperatorFeatures,
}

impl OperatorNode {
    pub fn new(id: OpId, features: OperatorFeatures) -> Self {
        OperatorNode { id, features }
    }

    pub fn kind(&self) -> OperatorKind {
        self.features.kind()
    }
}

/// Directed logical dataflow edge `(from, to)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge(pub OpId, pub OpId);

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryGraph {
    pub operators: Vec<OperatorNode>,
    pub edges: Vec<Edge>,
}

impl QueryGraph {
    pub fn operator(&self, id: &OpId) -> Option<&OperatorNode> {
        self.operators.iter().find(|op| &op.id == id)
    }

    pub fn count(&self, kind: OperatorKind) -> usize {
        self.operators.iter().filter(|op| op.kind() == kind).count()
    }
}

/// A compute node. `cpu` is in percent of a reference core, `ram` in MB,
/// `net_bandwidth` in Mbit/s and `net_latency` in ms (both outgoing).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareNode {
    pub id: HostId,
    pub cpu: f64,
    pub ram: f64,
    pub net_bandwidth: f64,
    pub net_latency: f64,
}

impl HardwareNode {
    pub fn violations(&self) -> Vec<String> {
        [
            ("cpu", self.cpu),
            ("ram", self.ram),
            ("net_bandwidth", self.net_bandwidth),
            ("net_latency", self.net_latency),
        ]
        .into_iter()
        .filter(|(_, v)| !(v.is_finite() && *v > 0.0))
        .map(|(name, v)| format!("host {}: {name} = {v} must be strictly positive", self.id))
        .collect()
    }
}

/// Total assignment of operators to hardware nodes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Placement {
    pub assignment: BTreeMap<OpId, HostId>,
}

impl Placement {
    pub fn host_of(&self, op: &OpId) -> Option<&HostId> {
        self.assignment.get(op)
    }
}

impl FromIterator<(OpId, HostId)> for Placement {
    fn from_iter<I: IntoIterator<Item = (OpId, HostId)>>(iter: I) -> Self {
        Placement { assignment: iter.into_iter().collect() }
    }
}

/// A structural problem found by [`validate_query`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Kahn's algorithm over `n` nodes; ready nodes are released in ascending
/// `key` order. Returns the order and the nodes left over (non-empty iff the
/// graph has a cycle).
pub(crate) fn kahn<K: Ord>(
    n: usize,
    edges: &[(usize, usize)],
    key: impl Fn(usize) -> K,
) -> (Vec<usize>, Vec<usize>) {
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        indegree[b] += 1;
        out[a].push(b);
    }
    let mut ready: BinaryHeap<Reverse<(K, usize)>> =
        (0..n).filter(|&i| indegree[i] == 0).map(|i| Reverse((key(i), i))).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((_, v))) = ready.pop() {
        order.push(v);
        for &w in &out[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                ready.push(Reverse((key(w), w)));
            }
        }
    }
    let remaining = (0..n).filter(|&i| indegree[i] > 0).collect();
    (order, remaining)
}

/// Checks every structural invariant of a query graph. An empty result means
/// the query is valid.
pub fn validate_query(q: &QueryGraph) -> Vec<Violation> {
    let mut v = Vec::new();
    let mut push = |s: String| v.push(Violation(s));

    if q.operators.is_empty() {
        push("query has no operators".into());
        return v;
    }

    let mut index: BTreeMap<&OpId, usize> = BTreeMap::new();
    for (i, op) in q.operators.iter().enumerate() {
        if index.insert(&op.id, i).is_some() {
            push(format!("duplicate operator id {}", op.id));
        }
        for problem in op.features.violations() {
            push(format!("{} {}: {problem}", op.kind().name(), op.id));
        }
    }

    let n = q.operators.len();
    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    for Edge(a, b) in &q.edges {
        match (index.get(a), index.get(b)) {
            (Some(&i), Some(&j)) => {
                if !seen.insert((i, j)) {
                    push(format!("duplicate edge {a} -> {b}"));
                } else {
                    edges.push((i, j));
                }
            }
            _ => push(format!("edge {a} -> {b} references an unknown operator")),
        }
    }

    let mut indeg = vec![0usize; n];
    let mut outdeg = vec![0usize; n];
    for &(i, j) in &edges {
        outdeg[i] += 1;
        indeg[j] += 1;
    }

    let sinks: Vec<usize> = (0..n).filter(|&i| q.operators[i].kind() == OperatorKind::Sink).collect();
    if sinks.len() != 1 {
        push(format!("query must have exactly one sink, found {}", sinks.len()));
    }

    for (i, op) in q.operators.iter().enumerate() {
        let kind = op.kind();
        if indeg[i] != kind.arity() {
            push(format!(
                "{} {} has in-degree {}, expected {}",
                kind.name(),
                op.id,
                indeg[i],
                kind.arity()
            ));
        }
        match kind {
            OperatorKind::Sink if outdeg[i] != 0 => {
                push(format!("sink {} has out-degree {}, expected 0", op.id, outdeg[i]))
            }
            OperatorKind::Sink => {}
            _ if outdeg[i] != 1 => push(format!(
                "{} {} has out-degree {}, expected 1 (dataflow must form a tree towards the sink)",
                kind.name(),
                op.id,
                outdeg[i]
            )),
            _ => {}
        }
    }

    let (_, cyclic) = kahn(n, &edges, |i| i);
    if !cyclic.is_empty() {
        let names: Vec<String> = cyclic.iter().map(|&i| q.operators[i].id.to_string()).collect();
        push(format!("cycle detected among operators [{}]", names.join(", ")));
    }

    // every operator must lie on a source -> sink path
    let reach = |starts: Vec<usize>, forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = starts;
        while let Some(x) = stack.pop() {
            if std::mem::replace(&mut seen[x], true) {
                continue;
            }
            for &(a, b) in &edges {
                let (from, to) = if forward { (a, b) } else { (b, a) };
                if from == x && !seen[to] {
                    stack.push(to);
                }
            }
        }
        seen
    };
    let sources: Vec<usize> =
        (0..n).filter(|&i| q.operators[i].kind() == OperatorKind::Source).collect();
    if sources.is_empty() {
        push("query has no source".into());
    }
    let from_source = reach(sources, true);
    let to_sink = reach(sinks, false);
    for (i, op) in q.operators.iter().enumerate() {
        if !(from_source[i] && to_sink[i]) {
            push(format!("{} {} is not on a source-to-sink path", op.kind().name(), op.id));
        }
    }
    v
}

/// Joint operator-resource graph in canonical form: operators in topological
/// order (ties broken by id), then the hosts that carry at least one operator,
/// sorted by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "JointGraphRecord", try_from = "JointGraphRecord")]
pub struct JointGraph {
    operators: Vec<OperatorNode>,
    hosts: Vec<HardwareNode>,
    dataflow: Vec<(usize, usize)>,
    host_of: Vec<usize>,
    preds: Vec<Vec<usize>>,
    hosted: Vec<Vec<usize>>,
}

/// Serialized form of a joint graph; derived edge sets are rebuilt on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointGraphRecord {
    pub query: QueryGraph,
    pub hardware: Vec<HardwareNode>,
    pub placement: Placement,
}

impl From<JointGraph> for JointGraphRecord {
    fn from(g: JointGraph) -> Self {
        JointGraphRecord { query: g.query(), hardware: g.hosts.clone(), placement: g.placement() }
    }
}

impl TryFrom<JointGraphRecord> for JointGraph {
    type Error = Error;

    fn try_from(r: JointGraphRecord) -> Result<Self> {
        build_joint_graph(&r.query, &r.hardware, &r.placement)
    }
}

/// Builds the joint graph for a placed query. Hosts without operators are dropped.
pub fn build_joint_graph(
    q: &QueryGraph,
    hw: &[HardwareNode],
    p: &Placement,
) -> Result<JointGraph> {
    let violations = validate_query(q);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::InvalidQuery(msgs.join("; ")));
    }
    let mut hosts_by_id: BTreeMap<&HostId, &HardwareNode> = BTreeMap::new();
    for h in hw {
        if let Some(problem) = h.violations().into_iter().next() {
            return Err(Error::InvalidHardware(problem));
        }
        if hosts_by_id.insert(&h.id, h).is_some() {
            return Err(Error::InvalidHardware(format!("duplicate host id {}", h.id)));
        }
    }

    let index: BTreeMap<&OpId, usize> = q.operators.iter().enumerate().map(|(i, op)| (&op.id, i)).collect();
    let raw_edges: Vec<(usize, usize)> =
        q.edges.iter().map(|Edge(a, b)| (index[a], index[b])).collect();
    let (order, cyclic) = kahn(q.operators.len(), &raw_edges, |i| q.operators[i].id.clone());
    if !cyclic.is_empty() {
        return Err(Error::CycleDetected);
    }
    let mut position = vec![0usize; order.len()];
    for (pos, &orig) in order.iter().enumerate() {
        position[orig] = pos;
    }
    let operators: Vec<OperatorNode> = order.iter().map(|&i| q.operators[i].clone()).collect();
    let mut dataflow: Vec<(usize, usize)> =
        raw_edges.iter().map(|&(a, b)| (position[a], position[b])).collect();
    dataflow.sort_unstable();

    let mut used: BTreeMap<&HostId, &HardwareNode> = BTreeMap::new();
    for op in &operators {
        let host = p.host_of(&op.id).ok_or_else(|| Error::MissingAssignment(op.id.to_string()))?;
        let node = hosts_by_id.get(host).ok_or_else(|| Error::UnknownHardware(host.to_string()))?;
        used.insert(host, node);
    }
    let hosts: Vec<HardwareNode> = used.values().map(|h| (*h).clone()).collect();
    let host_index: BTreeMap<&HostId, usize> = hosts.iter().enumerate().map(|(i, h)| (&h.id, i)).collect();
    let host_of: Vec<usize> = operators.iter().map(|op| host_index[&p.assignment[&op.id]]).collect();

    let mut preds = vec![Vec::new(); operators.len()];
    for &(a, b) in &dataflow {
        preds[b].push(a);
    }
    let mut hosted = vec![Vec::new(); hosts.len()];
    for (op, &h) in host_of.iter().enumerate() {
        hosted[h].push(op);
    }
    Ok(JointGraph { operators, hosts, dataflow, host_of, preds, hosted })
}

impl JointGraph {
    /// Operators in canonical topological order.
    pub fn operators(&self) -> &[OperatorNode] {
        &self.operators
    }

    /// Placed hosts sorted by id.
    pub fn hosts(&self) -> &[HardwareNode] {
        &self.hosts
    }

    pub fn num_nodes(&self) -> usize {
        self.operators.len() + self.hosts.len()
    }

    /// Operator nodes followed by host nodes.
    pub fn nodes(&self) -> impl Iterator<Item = NodeRef<'_>> {
        self.operators
            .iter()
            .map(NodeRef::Operator)
            .chain(self.hosts.iter().map(NodeRef::Hardware))
    }

    /// Dataflow edges as operator index pairs, sorted.
    pub fn dataflow_edges(&self) -> &[(usize, usize)] {
        &self.dataflow
    }

    /// Operator -> host edges.
    pub fn placement_edges(&self) -> Vec<(usize, usize)> {
        self.host_of.iter().enumerate().map(|(op, &h)| (op, h)).collect()
    }

    /// Host -> operator edges, the mirror of [`Self::placement_edges`].
    pub fn reverse_placement_edges(&self) -> Vec<(usize, usize)> {
        self.placement_edges().into_iter().map(|(op, h)| (h, op)).collect()
    }

    /// Host index of an operator.
    pub fn host_of(&self, op: usize) -> usize {
        self.host_of[op]
    }

    /// Dataflow predecessors of an operator, ascending.
    pub fn predecessors(&self, op: usize) -> &[usize] {
        &self.preds[op]
    }

    /// Operators placed on a host, ascending.
    pub fn operators_on(&self, host: usize) -> &[usize] {
        &self.hosted[host]
    }

    pub fn sink(&self) -> usize {
        self.operators
            .iter()
            .position(|op| op.kind() == OperatorKind::Sink)
            .expect("validated query has a sink")
    }

    /// Successor of a non-sink operator (queries are in-trees).
    pub fn successor(&self, op: usize) -> Option<usize> {
        self.dataflow.iter().find(|&&(a, _)| a == op).map(|&(_, b)| b)
    }

    /// Reconstructs the query in canonical order.
    pub fn query(&self) -> QueryGraph {
        QueryGraph {
            operators: self.operators.clone(),
            edges: self
                .dataflow
                .iter()
                .map(|&(a, b)| Edge(self.operators[a].id.clone(), self.operators[b].id.clone()))
                .collect(),
        }
    }

    pub fn placement(&self) -> Placement {
        self.operators
            .iter()
            .zip(&self.host_of)
            .map(|(op, &h)| (op.id.clone(), self.hosts[h].id.clone()))
            .collect()
    }
}

/// Operators of `g` ordered so that each follows all of its dataflow predecessors.
pub fn topological_order(g: &JointGraph) -> Result<Vec<&OperatorNode>> {
    let (order, cyclic) = kahn(g.operators.len(), &g.dataflow, |i| g.operators[i].id.clone());
    if !cyclic.is_empty() {
        return Err(Error::CycleDetected);
    }
    Ok(order.into_iter().map(|i| &g.operators[i]).collect())
}

/// The five cost metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "T")]
    Throughput,
    #[serde(rename = "L_p")]
    ProcLatency,
    #[serde(rename = "L_e")]
    E2eLatency,
    #[serde(rename = "R_O")]
    Backpressure,
    #[serde(rename = "S")]
    Success,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Throughput,
        Metric::ProcLatency,
        Metric::E2eLatency,
        Metric::Backpressure,
        Metric::Success,
    ];
    pub const REGRESSION: [Metric; 3] = [Metric::Throughput, Metric::ProcLatency, Metric::E2eLatency];

    pub fn is_binary(self) -> bool {
        matches!(self, Metric::Backpressure | Metric::Success)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Metric::Throughput => "T",
            Metric::ProcLatency => "L_p",
            Metric::E2eLatency => "L_e",
            Metric::Backpressure => "R_O",
            Metric::Success => "S",
        }
    }

    /// Accepts the short tag or the long name (`throughput`, `proc_latency`, ...).
    pub fn parse(s: &str) -> Option<Metric> {
        let m = match s {
            "T" | "throughput" => Metric::Throughput,
            "L_p" | "proc_latency" => Metric::ProcLatency,
            "L_e" | "e2e_latency" => Metric::E2eLatency,
            "R_O" | "backpressure" => Metric::Backpressure,
            "S" | "success" => Metric::Success,
            _ => return None,
        };
        Some(m)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Observed costs of one execution. Latencies are `None` when the query did
/// not succeed (nothing reached the sink).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostVector {
    pub throughput: f64,
    pub proc_latency: Option<f64>,
    pub e2e_latency: Option<f64>,
    pub backpressure: bool,
    pub success: bool,
}

impl CostVector {
    pub fn failed(backpressure: bool) -> Self {
        CostVector { throughput: 0.0, proc_latency: None, e2e_latency: None, backpressure, success: false }
    }

    /// Label for a metric; binary metrics map to 0/1. `None` for regression
    /// metrics of a failed execution.
    pub fn value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Throughput => self.success.then_some(self.throughput),
            Metric::ProcLatency => self.proc_latency,
            Metric::E2eLatency => self.e2e_latency,
            Metric::Backpressure => Some(if self.backpressure { 1.0 } else { 0.0 }),
            Metric::Success => Some(if self.success { 1.0 } else { 0.0 }),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.throughput >= 0.0) {
            out.push(format!("throughput {} is negative", self.throughput));
        }
        if self.success {
            for (name, l) in [("proc_latency", self.proc_latency), ("e2e_latency", self.e2e_latency)] {
                match l {
                    Some(v) if v > 0.0 => {}
                    other => out.push(format!("{name} = {other:?} must be positive on success")),
                }
            }
        } else if self.throughput != 0.0 || self.proc_latency.is_some() || self.e2e_latency.is_some() {
            out.push("failed execution must have zero throughput and no latencies".into());
        }
        out
    }
}
