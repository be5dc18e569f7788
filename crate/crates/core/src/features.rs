//! Transferable node features, selectivity definitions and feature encoding.
//!
//! Every operator and hardware node is described by features that do not
//! depend on the identity of a particular query or machine: rates, tuple
//! widths, selectivities, window descriptors and resource capacities. The
//! encoder turns them into fixed-length numeric vectors, one layout per node
//! type, using robust statistics fitted on training graphs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HardwareNode, JointGraph, OperatorKind, OperatorNode};

/// Version of the slot layout produced by [`FeatureSchema::current`].
pub const SCHEMA_VERSION: u32 = 1;

/// Interquartile ranges below this are treated as degenerate; the fitted
/// scale then falls back to the full value range, or 1 for constants.
pub const IQR_FLOOR: f64 = 1e-6;

/// A closed categorical vocabulary.
pub trait Category: Copy + Sized + 'static {
    const ALL: &'static [Self];
    fn name(self) -> &'static str;
}

macro_rules! category {
    ($(#[$meta:meta])* $ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $ty {
            $(#[serde(rename = $name)] $variant),+
        }

        impl Category for $ty {
            const ALL: &'static [Self] = &[$($ty::$variant),+];
            fn name(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

category!(
    /// Value type of a tuple field, filter literal, join key or aggregate.
    DataType { Int => "int", String => "string", Double => "double" }
);

category!(
    FilterFunction {
        Lt => "<",
        Gt => ">",
        Le => "<=",
        Ge => ">=",
        Ne => "!=",
        StartsWith => "startswith",
        EndsWith => "endswith",
    }
);

category!(
    /// `avg` is accepted on input as a synonym of `mean`.
    AggFunction { Min => "min", Max => "max", Mean => "mean", Sum => "sum" }
);

category!(
    GroupByType { Int => "int", String => "string", Double => "double", None => "none" }
);

category!(WindowType { Sliding => "sliding", Tumbling => "tumbling" });

category!(WindowPolicy { Count => "count", Time => "time" });

impl AggFunction {
    /// Parses a function name, folding `avg` into `mean`.
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "avg" => Some(AggFunction::Mean),
            other => Self::ALL.iter().copied().find(|f| f.name() == other),
        }
    }
}

/// Window descriptor shared by windowed aggregations and joins.
///
/// `size` is in tuples for count windows and seconds for time windows; `slide`
/// uses the same unit and is present only for sliding windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_type: WindowType,
    pub policy: WindowPolicy,
    pub size: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slide: Option<f64>,
}

impl WindowSpec {
    /// Distance between consecutive window starts; a tumbling window slides by its size.
    pub fn effective_slide(&self) -> f64 {
        self.slide.unwrap_or(self.size)
    }

    fn violations(&self, out: &mut Vec<String>) {
        if !(self.size.is_finite() && self.size > 0.0) {
            out.push(format!("window size {} must be positive", self.size));
        }
        match (self.window_type, self.slide) {
            (WindowType::Sliding, None) => out.push("sliding window without slide size".into()),
            (WindowType::Tumbling, Some(_)) => {
                out.push("tumbling window must not carry a slide size".into())
            }
            (WindowType::Sliding, Some(slide)) => {
                let ratio = slide / self.size;
                if !(0.3 - 1e-9..=0.7 + 1e-9).contains(&ratio) {
                    out.push(format!(
                        "slide size {slide} outside [0.3, 0.7] x window size {}",
                        self.size
                    ));
                }
            }
            (WindowType::Tumbling, None) => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceFeatures {
    /// Events per second emitted by the source.
    pub event_rate: f64,
    /// One entry per tuple field.
    pub data_types: Vec<DataType>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterFeatures {
    pub tuple_width_in: f64,
    pub tuple_width_out: f64,
    pub function: FilterFunction,
    pub literal_type: DataType,
    pub selectivity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationFeatures {
    pub tuple_width_in: f64,
    pub tuple_width_out: f64,
    #[serde(deserialize_with = "de_agg_function")]
    pub function: AggFunction,
    pub group_by: GroupByType,
    pub agg_type: DataType,
    pub selectivity: f64,
    pub window: WindowSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinFeatures {
    pub tuple_width_in: f64,
    pub tuple_width_out: f64,
    pub key_type: DataType,
    pub selectivity: f64,
    pub window: WindowSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkFeatures {
    pub tuple_width_in: f64,
    pub tuple_width_out: f64,
}

fn de_agg_function<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<AggFunction, D::Error> {
    let name = String::deserialize(d)?;
    AggFunction::parse(&name)
        .ok_or_else(|| serde::de::Error::custom(format!("unknown aggregation function `{name}`")))
}

/// Per-operator features; the variant fixes which feature groups exist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorFeatures {
    Source(SourceFeatures),
    Filter(FilterFeatures),
    WindowedAggregation(AggregationFeatures),
    WindowedJoin(JoinFeatures),
    Sink(SinkFeatures),
}

impl OperatorFeatures {
    pub fn kind(&self) -> OperatorKind {
        match self {
            OperatorFeatures::Source(_) => OperatorKind::Source,
            OperatorFeatures::Filter(_) => OperatorKind::Filter,
            OperatorFeatures::WindowedAggregation(_) => OperatorKind::WindowedAggregation,
            OperatorFeatures::WindowedJoin(_) => OperatorKind::WindowedJoin,
            OperatorFeatures::Sink(_) => OperatorKind::Sink,
        }
    }

    pub fn tuple_width_in(&self) -> f64 {
        match self {
            OperatorFeatures::Source(s) => s.data_types.len() as f64,
            OperatorFeatures::Filter(f) => f.tuple_width_in,
            OperatorFeatures::WindowedAggregation(a) => a.tuple_width_in,
            OperatorFeatures::WindowedJoin(j) => j.tuple_width_in,
            OperatorFeatures::Sink(s) => s.tuple_width_in,
        }
    }

    pub fn tuple_width_out(&self) -> f64 {
        match self {
            OperatorFeatures::Source(s) => s.data_types.len() as f64,
            OperatorFeatures::Filter(f) => f.tuple_width_out,
            OperatorFeatures::WindowedAggregation(a) => a.tuple_width_out,
            OperatorFeatures::WindowedJoin(j) => j.tuple_width_out,
            OperatorFeatures::Sink(s) => s.tuple_width_out,
        }
    }

    pub fn selectivity(&self) -> Option<f64> {
        match self {
            OperatorFeatures::Filter(f) => Some(f.selectivity),
            OperatorFeatures::WindowedAggregation(a) => Some(a.selectivity),
            OperatorFeatures::WindowedJoin(j) => Some(j.selectivity),
            OperatorFeatures::Source(_) | OperatorFeatures::Sink(_) => None,
        }
    }

    pub fn window(&self) -> Option<&WindowSpec> {
        match self {
            OperatorFeatures::WindowedAggregation(a) => Some(&a.window),
            OperatorFeatures::WindowedJoin(j) => Some(&j.window),
            _ => None,
        }
    }

    /// Feature-level invariant violations (ranges, window consistency).
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(sel) = self.selectivity() {
            if !(0.0..=1.0).contains(&sel) {
                out.push(format!("selectivity {sel} outside [0, 1]"));
            }
        }
        if let Some(w) = self.window() {
            w.violations(&mut out);
        }
        match self {
            OperatorFeatures::Source(s) => {
                if !(s.event_rate.is_finite() && s.event_rate > 0.0) {
                    out.push(format!("event rate {} must be positive", s.event_rate));
                }
                if s.data_types.is_empty() {
                    out.push("source tuples need at least one field".into());
                }
            }
            _ => {
                for (name, w) in [("in", self.tuple_width_in()), ("out", self.tuple_width_out())] {
                    if !(w.is_finite() && w > 0.0) {
                        out.push(format!("tuple width {name} {w} must be positive"));
                    }
                }
            }
        }
        out
    }
}

/// Ratio of outgoing to incoming tuples of a filter, clamped to `[0, 1]`.
pub fn filter_selectivity(out_count: u64, in_count: u64) -> Result<f64> {
    if in_count == 0 {
        return Err(Error::EmptyStream);
    }
    Ok((out_count as f64 / in_count as f64).clamp(0.0, 1.0))
}

/// Qualifying join partners over the cartesian product of both windows.
pub fn join_selectivity(matches: u64, left_window: u64, right_window: u64) -> Result<f64> {
    if left_window == 0 || right_window == 0 {
        return Err(Error::EmptyWindow);
    }
    let product = left_window as f64 * right_window as f64;
    Ok((matches as f64 / product).clamp(0.0, 1.0))
}

/// Distinct group-by values over the window length.
pub fn agg_selectivity(distinct_groups: u64, window_len: u64) -> Result<f64> {
    if window_len == 0 {
        return Err(Error::EmptyWindow);
    }
    Ok((distinct_groups as f64 / window_len as f64).clamp(0.0, 1.0))
}

/// Node types of the joint operator-resource graph; each has its own encoder
/// and update network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Source,
    Filter,
    Aggregation,
    Join,
    Sink,
    Host,
}

impl NodeType {
    pub const ALL: [NodeType; 6] = [
        NodeType::Source,
        NodeType::Filter,
        NodeType::Aggregation,
        NodeType::Join,
        NodeType::Sink,
        NodeType::Host,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NodeType::Source => "source",
            NodeType::Filter => "filter",
            NodeType::Aggregation => "aggregation",
            NodeType::Join => "join",
            NodeType::Sink => "sink",
            NodeType::Host => "host",
        }
    }
}

impl From<OperatorKind> for NodeType {
    fn from(kind: OperatorKind) -> Self {
        match kind {
            OperatorKind::Source => NodeType::Source,
            OperatorKind::Filter => NodeType::Filter,
            OperatorKind::WindowedAggregation => NodeType::Aggregation,
            OperatorKind::WindowedJoin => NodeType::Join,
            OperatorKind::Sink => NodeType::Sink,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Log1p,
    Linear,
    OneHot,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub transform: Transform,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocabulary: Vec<String>,
}

impl SlotSpec {
    fn numeric(name: &str, transform: Transform) -> Self {
        SlotSpec { name: name.to_string(), transform, vocabulary: Vec::new() }
    }

    fn one_hot<C: Category>(name: &str) -> Self {
        SlotSpec {
            name: name.to_string(),
            transform: Transform::OneHot,
            vocabulary: C::ALL.iter().map(|c| c.name().to_string()).collect(),
        }
    }

    pub fn width(&self) -> usize {
        match self.transform {
            Transform::OneHot => self.vocabulary.len(),
            _ => 1,
        }
    }
}

/// Slot layout of every node type's encoder input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub node_types: BTreeMap<NodeType, Vec<SlotSpec>>,
}

impl FeatureSchema {
    pub fn current() -> Self {
        use Transform::{Linear, Log1p};
        let widths = || {
            vec![
                SlotSpec::numeric("tuple_width_in", Linear),
                SlotSpec::numeric("tuple_width_out", Linear),
            ]
        };
        let window = || {
            vec![
                SlotSpec::numeric("window_size", Log1p),
                SlotSpec::numeric("slide_size", Log1p),
                SlotSpec::one_hot::<WindowType>("window_type"),
                SlotSpec::one_hot::<WindowPolicy>("window_policy"),
            ]
        };

        let mut node_types = BTreeMap::new();
        let mut source = widths();
        source.extend([
            SlotSpec::numeric("input_event_rate", Log1p),
            SlotSpec::numeric("fields_int", Linear),
            SlotSpec::numeric("fields_string", Linear),
            SlotSpec::numeric("fields_double", Linear),
        ]);
        node_types.insert(NodeType::Source, source);

        let mut filter = widths();
        filter.extend([
            SlotSpec::numeric("selectivity", Linear),
            SlotSpec::one_hot::<FilterFunction>("filter_function"),
            SlotSpec::one_hot::<DataType>("literal_data_type"),
        ]);
        node_types.insert(NodeType::Filter, filter);

        let mut agg = widths();
        agg.push(SlotSpec::numeric("selectivity", Linear));
        agg.extend(window());
        agg.extend([
            SlotSpec::one_hot::<AggFunction>("agg_function"),
            SlotSpec::one_hot::<GroupByType>("group_by_data_type"),
            SlotSpec::one_hot::<DataType>("agg_data_type"),
        ]);
        node_types.insert(NodeType::Aggregation, agg);

        let mut join = widths();
        join.push(SlotSpec::numeric("selectivity", Linear));
        join.extend(window());
        join.push(SlotSpec::one_hot::<DataType>("join_key_data_type"));
        node_types.insert(NodeType::Join, join);

        node_types.insert(NodeType::Sink, widths());

        node_types.insert(
            NodeType::Host,
            vec![
                SlotSpec::numeric("cpu", Linear),
                SlotSpec::numeric("ram", Log1p),
                SlotSpec::numeric("network_bandwidth", Log1p),
                SlotSpec::numeric("network_latency", Log1p),
            ],
        );

        FeatureSchema { version: SCHEMA_VERSION, node_types }
    }

    /// Encoded vector length for a node type.
    pub fn width(&self, node_type: NodeType) -> usize {
        self.node_types.get(&node_type).map_or(0, |slots| slots.iter().map(SlotSpec::width).sum())
    }

    pub fn slots(&self, node_type: NodeType) -> &[SlotSpec] {
        self.node_types.get(&node_type).map_or(&[], Vec::as_slice)
    }

    /// Plain-text listing of every slot and vocabulary.
    pub fn to_human_readable(&self) -> String {
        let mut out = format!("feature schema v{}\n", self.version);
        for (node_type, slots) in &self.node_types {
            out.push_str(&format!("\n[{node_type}] width={}\n", self.width(*node_type)));
            for slot in slots {
                match slot.transform {
                    Transform::OneHot => out.push_str(&format!(
                        "  {:<22} one-hot {{{}}}\n",
                        slot.name,
                        slot.vocabulary.join(", ")
                    )),
                    Transform::Log1p => {
                        out.push_str(&format!("  {:<22} log1p, robust-scaled\n", slot.name))
                    }
                    Transform::Linear => {
                        out.push_str(&format!("  {:<22} linear, robust-scaled\n", slot.name))
                    }
                }
            }
        }
        out
    }
}

/// A node of the joint graph as seen by the encoder.
#[derive(Clone, Copy, Debug)]
pub enum NodeRef<'a> {
    Operator(&'a OperatorNode),
    Hardware(&'a HardwareNode),
}

impl NodeRef<'_> {
    pub fn node_type(&self) -> NodeType {
        match self {
            NodeRef::Operator(op) => op.kind().into(),
            NodeRef::Hardware(_) => NodeType::Host,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Raw {
    Num(f64),
    Cat(&'static str),
}

/// Raw feature values in the slot order of [`FeatureSchema::current`].
fn raw_features(node: NodeRef<'_>) -> Vec<Raw> {
    use Raw::{Cat, Num};
    let op = match node {
        NodeRef::Hardware(hw) => {
            return vec![Num(hw.cpu), Num(hw.ram), Num(hw.net_bandwidth), Num(hw.net_latency)];
        }
        NodeRef::Operator(op) => op,
    };
    let f = &op.features;
    let mut raw = vec![Num(f.tuple_width_in()), Num(f.tuple_width_out())];
    let window = |w: &WindowSpec, raw: &mut Vec<Raw>| {
        raw.extend([
            Num(w.size),
            Num(w.effective_slide()),
            Cat(w.window_type.name()),
            Cat(w.policy.name()),
        ]);
    };
    match f {
        OperatorFeatures::Source(s) => {
            let count = |t: DataType| s.data_types.iter().filter(|d| **d == t).count() as f64;
            raw.extend([
                Num(s.event_rate),
                Num(count(DataType::Int)),
                Num(count(DataType::String)),
                Num(count(DataType::Double)),
            ]);
        }
        OperatorFeatures::Filter(fl) => {
            raw.extend([Num(fl.selectivity), Cat(fl.function.name()), Cat(fl.literal_type.name())]);
        }
        OperatorFeatures::WindowedAggregation(a) => {
            raw.push(Num(a.selectivity));
            window(&a.window, &mut raw);
            raw.extend([Cat(a.function.name()), Cat(a.group_by.name()), Cat(a.agg_type.name())]);
        }
        OperatorFeatures::WindowedJoin(j) => {
            raw.push(Num(j.selectivity));
            window(&j.window, &mut raw);
            raw.push(Cat(j.key_type.name()));
        }
        OperatorFeatures::Sink(_) => {}
    }
    raw
}

fn transformed(value: f64, transform: Transform) -> f64 {
    match transform {
        Transform::Log1p => value.ln_1p(),
        _ => value,
    }
}

fn stat_key(node_type: NodeType, slot: &str) -> String {
    format!("{node_type}.{slot}")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustStat {
    pub median: f64,
    pub iqr: f64,
}

impl RobustStat {
    pub fn scale(&self, x: f64) -> f64 {
        (x - self.median) / self.iqr.max(IQR_FLOOR)
    }
}

/// Per-feature robust statistics, keyed `"<node type>.<slot>"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub schema_version: u32,
    pub features: BTreeMap<String, RobustStat>,
}

impl NormalizationStats {
    pub fn get(&self, node_type: NodeType, slot: &str) -> Result<RobustStat> {
        let key = stat_key(node_type, slot);
        self.features.get(&key).copied().ok_or(Error::MissingStats(key))
    }
}

/// Linear-interpolation percentile of an ascending-sorted slice, `q` in `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Fits median and interquartile range of every numeric slot over all node
/// instances in `dataset` (values after the slot's transform).
///
/// Node types absent from the dataset get identity statistics so that a model
/// trained on them can still encode such nodes later.
pub fn fit_stats<'a, I>(dataset: I) -> Result<NormalizationStats>
where
    I: IntoIterator<Item = &'a JointGraph>,
{
    let schema = FeatureSchema::current();
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut graphs = 0usize;
    for graph in dataset {
        graphs += 1;
        for node in graph.nodes() {
            let node_type = node.node_type();
            for (slot, raw) in schema.slots(node_type).iter().zip(raw_features(node)) {
                if let Raw::Num(v) = raw {
                    samples
                        .entry(stat_key(node_type, &slot.name))
                        .or_default()
                        .push(transformed(v, slot.transform));
                }
            }
        }
    }
    if graphs == 0 {
        return Err(Error::EmptyDataset);
    }

    let mut features = BTreeMap::new();
    for (node_type, slots) in &schema.node_types {
        for slot in slots.iter().filter(|s| s.transform != Transform::OneHot) {
            let key = stat_key(*node_type, &slot.name);
            let stat = match samples.get_mut(&key) {
                Some(values) => {
                    values.sort_by(f64::total_cmp);
                    let iqr = percentile_sorted(values, 0.75) - percentile_sorted(values, 0.25);
                    let range = values[values.len() - 1] - values[0];
                    let scale = if iqr > IQR_FLOOR {
                        iqr
                    } else if range > IQR_FLOOR {
                        range
                    } else {
                        1.0
                    };
                    RobustStat { median: percentile_sorted(values, 0.5), iqr: scale }
                }
                None => RobustStat { median: 0.0, iqr: 1.0 },
            };
            features.insert(key, stat);
        }
    }
    Ok(NormalizationStats { schema_version: SCHEMA_VERSION, features })
}

/// Encodes one node into its type's fixed-length input vector.
pub fn encode_node(node: NodeRef<'_>, stats: &NormalizationStats) -> Result<Vec<f64>> {
    encode_with_schema(node, stats, &FeatureSchema::current())
}

pub fn encode_with_schema(
    node: NodeRef<'_>,
    stats: &NormalizationStats,
    schema: &FeatureSchema,
) -> Result<Vec<f64>> {
    let node_type = node.node_type();
    let slots = schema.slots(node_type);
    let raw = raw_features(node);
    if raw.len() != slots.len() {
        return Err(Error::SchemaMismatch(format!(
            "{node_type}: schema has {} slots, node provides {}",
            slots.len(),
            raw.len()
        )));
    }
    let mut out = Vec::with_capacity(schema.width(node_type));
    for (slot, value) in slots.iter().zip(raw) {
        match (slot.transform, value) {
            (Transform::OneHot, Raw::Cat(cat)) => {
                let hot = slot.vocabulary.iter().position(|v| v == cat).ok_or_else(|| {
                    Error::UnknownCategory { feature: slot.name.clone(), value: cat.to_string() }
                })?;
                out.extend((0..slot.vocabulary.len()).map(|i| if i == hot { 1.0 } else { 0.0 }));
            }
            (transform, Raw::Num(v)) if transform != Transform::OneHot => {
                let stat = stats.get(node_type, &slot.name)?;
                out.push(stat.scale(transformed(v, transform)));
            }
            _ => {
                return Err(Error::SchemaMismatch(format!(
                    "{node_type}.{}: slot kind does not match value",
                    slot.name
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::OpId;

    fn filter(function: FilterFunction, selectivity: f64) -> OperatorNode {
        OperatorNode::new(
            OpId::from("f"),
            OperatorFeatures::Filter(FilterFeatures {
                tuple_width_in: 4.0,
                tuple_width_out: 4.0,
                function,
                literal_type: DataType::Int,
                selectivity,
            }),
        )
    }

    fn identity_stats() -> NormalizationStats {
        let schema = FeatureSchema::current();
        let mut features = BTreeMap::new();
        for (t, slots) in &schema.node_types {
            for s in slots.iter().filter(|s| s.transform != Transform::OneHot) {
                features.insert(stat_key(*t, &s.name), RobustStat { median: 0.0, iqr: 1.0 });
            }
        }
        NormalizationStats { schema_version: SCHEMA_VERSION, features }
    }

    #[test]
    fn selectivity_examples() {
        assert_eq!(filter_selectivity(100, 100).unwrap(), 1.0);
        assert_eq!(filter_selectivity(0, 100).unwrap(), 0.0);
        assert_eq!(filter_selectivity(37, 100).unwrap(), 0.37);
        assert!(matches!(filter_selectivity(1, 0), Err(Error::EmptyStream)));

        assert_eq!(join_selectivity(40, 5, 8).unwrap(), 1.0);
        assert_eq!(join_selectivity(0, 5, 8).unwrap(), 0.0);
        assert_eq!(join_selectivity(10, 5, 8).unwrap(), 0.25);
        assert!(matches!(join_selectivity(1, 0, 8), Err(Error::EmptyWindow)));

        assert_eq!(agg_selectivity(1, 64).unwrap(), 0.015625);
        assert_eq!(agg_selectivity(64, 64).unwrap(), 1.0);
        assert_eq!(agg_selectivity(16, 64).unwrap(), 0.25);
        assert!(matches!(agg_selectivity(1, 0), Err(Error::EmptyWindow)));
    }

    #[test]
    fn filter_function_one_hot_follows_vocabulary_order() {
        let v = encode_node(NodeRef::Operator(&filter(FilterFunction::Lt, 0.5)), &identity_stats())
            .unwrap();
        // widths (2), selectivity (1), then the 7-way function slot
        assert_eq!(&v[3..10], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let v = encode_node(NodeRef::Operator(&filter(FilterFunction::EndsWith, 0.5)), &identity_stats())
            .unwrap();
        assert_eq!(&v[3..10], &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn selectivity_is_centered_by_median() {
        let mut stats = identity_stats();
        stats
            .features
            .insert("filter.selectivity".into(), RobustStat { median: 0.5, iqr: 0.4 });
        let v = encode_node(NodeRef::Operator(&filter(FilterFunction::Gt, 0.5)), &stats).unwrap();
        assert_eq!(v[2], 0.0);
        let v = encode_node(NodeRef::Operator(&filter(FilterFunction::Gt, 0.9)), &stats).unwrap();
        assert!((v[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_stats_are_reported() {
        let mut stats = identity_stats();
        stats.features.remove("filter.selectivity");
        let err = encode_node(NodeRef::Operator(&filter(FilterFunction::Gt, 0.5)), &stats).unwrap_err();
        assert!(matches!(err, Error::MissingStats(k) if k == "filter.selectivity"));
    }

    #[test]
    fn unknown_category_is_rejected() {
        let mut schema = FeatureSchema::current();
        let slots = schema.node_types.get_mut(&NodeType::Filter).unwrap();
        slots[3].vocabulary.retain(|v| v != "!=");
        let node = filter(FilterFunction::Ne, 0.5);
        let err = encode_with_schema(NodeRef::Operator(&node), &identity_stats(), &schema).unwrap_err();
        assert!(matches!(err, Error::UnknownCategory { .. }));
    }

    #[test]
    fn avg_parses_as_mean() {
        assert_eq!(AggFunction::parse("avg"), Some(AggFunction::Mean));
        assert_eq!(AggFunction::parse("sum"), Some(AggFunction::Sum));
        assert_eq!(AggFunction::parse("median"), None);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile_sorted(&[1.0, 3.0], 0.5), 2.0);
        assert_eq!(percentile_sorted(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
        assert_eq!(percentile_sorted(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn schema_widths() {
        let s = FeatureSchema::current();
        assert_eq!(s.width(NodeType::Filter), 2 + 1 + 7 + 3);
        assert_eq!(s.width(NodeType::Host), 4);
        assert_eq!(s.width(NodeType::Sink), 2);
        assert!(s.to_human_readable().contains("startswith"));
    }
}
