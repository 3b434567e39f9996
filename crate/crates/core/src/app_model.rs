//! Application elements: states, reductions, triggers and activities.
//!
//! An application is a small dataflow graph. States are measured by switches,
//! reductions combine (possibly replicated) states into a reduced value, a
//! trigger evaluates a predicate over a reduced value and, when it fires, runs
//! an activity. Every trigger carries an inconsistency budget which later
//! decides how often replicas of its ancestor states are synchronized.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::time::Nanos;

/// Widest state value a switch register can hold (and the width of the
/// `stateValue` wire field).
pub const STATE_MAX_WIDTH: u32 = 64;

/// How much divergence between replicas a trigger tolerates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InconsistencySpec {
    /// No replica may hold a value older than `epsilon_t`.
    TimeObsolescence { epsilon_t: Nanos },
    /// No replica may lag its origin by more than `epsilon_r` writes, given
    /// that the state is written at most `max_write_rate` times per second.
    UpdateError { epsilon_r: u64, max_write_rate: f64 },
    /// Replication forbidden: a single replica of every ancestor state.
    None,
}

impl InconsistencySpec {
    pub fn allows_replication(&self) -> bool {
        !matches!(self, InconsistencySpec::None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PortClass {
    External,
    Uplink,
    Downlink,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum L4Filter {
    SynOnly,
    Any,
}

/// Which packets feed a state or are subject to an activity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScopeFilter {
    pub port_class: PortClass,
    pub l4_flag_filter: Option<L4Filter>,
    /// Destination host names; `None` matches every destination.
    pub dst_filter: Option<BTreeSet<String>>,
}

impl ScopeFilter {
    pub fn any() -> ScopeFilter {
        ScopeFilter {
            port_class: PortClass::Any,
            l4_flag_filter: None,
            dst_filter: None,
        }
    }

    pub fn external() -> ScopeFilter {
        ScopeFilter {
            port_class: PortClass::External,
            l4_flag_filter: None,
            dst_filter: None,
        }
    }

    pub fn external_syn() -> ScopeFilter {
        ScopeFilter {
            port_class: PortClass::External,
            l4_flag_filter: Some(L4Filter::SynOnly),
            dst_filter: None,
        }
    }

    pub fn syn() -> ScopeFilter {
        ScopeFilter {
            port_class: PortClass::Any,
            l4_flag_filter: Some(L4Filter::SynOnly),
            dst_filter: None,
        }
    }

    pub fn port(port_class: PortClass) -> ScopeFilter {
        ScopeFilter {
            port_class,
            l4_flag_filter: None,
            dst_filter: None,
        }
    }

    pub fn with_destinations<I, S>(mut self, dsts: I) -> ScopeFilter
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.dst_filter = Some(dsts.into_iter().map(Into::into).collect());
        self
    }

    /// Evaluates the filter against packet metadata.
    pub fn matches(&self, view: &PacketView<'_>) -> bool {
        let port_ok = match self.port_class {
            PortClass::Any => true,
            PortClass::External => view.entered_domain,
            PortClass::Uplink => view.egress_class == Some(PortClass::Uplink),
            PortClass::Downlink => view.egress_class == Some(PortClass::Downlink),
        };
        let flag_ok = match self.l4_flag_filter {
            None | Some(L4Filter::Any) => true,
            Some(L4Filter::SynOnly) => view.syn,
        };
        let dst_ok = match &self.dst_filter {
            None => true,
            Some(set) => set.contains(view.dst),
        };
        port_ok && flag_ok && dst_ok
    }
}

/// The packet metadata a [`ScopeFilter`] may look at.
#[derive(Debug, Clone, Copy)]
pub struct PacketView<'a> {
    /// Packet is entering the monitored domain at this switch: it arrived on
    /// an external port, or it was steered here to be accounted.
    pub entered_domain: bool,
    /// Class of the port the packet leaves on, when already decided.
    pub egress_class: Option<PortClass>,
    pub syn: bool,
    pub dst: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValueKind {
    Counter,
    RateEstimate,
    Scalar,
    ScalarArray(u32),
}

/// What a single packet contributes to a counter or rate state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SampleUnit {
    Packets,
    Bits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpec {
    pub name: String,
    pub scope: ScopeFilter,
    pub value_kind: ValueKind,
    pub width_bits: u32,
    /// Node that writes the state. `"A->B"` names the port of `A` facing `B`.
    pub target_hint: Option<String>,
    pub sample: SampleUnit,
}

impl StateSpec {
    pub fn new(name: impl Into<String>, scope: ScopeFilter, value_kind: ValueKind) -> StateSpec {
        StateSpec {
            name: name.into(),
            scope,
            value_kind,
            width_bits: 32,
            target_hint: None,
            sample: SampleUnit::Packets,
        }
    }

    pub fn counting(mut self, sample: SampleUnit) -> StateSpec {
        self.sample = sample;
        self
    }

    pub fn width(mut self, bits: u32) -> StateSpec {
        self.width_bits = bits;
        self
    }

    pub fn target(mut self, node: impl Into<String>) -> StateSpec {
        self.target_hint = Some(node.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReductionPrimitive {
    Sum,
    Mean,
    ArgMin,
    ArgMax,
    Max,
    /// `argmin_i max(x_i, x_{P+i})` over `2P` inputs.
    MinMaxArgMin,
    /// Pass-through of a single input; inserted for triggers reading a raw state.
    Identity,
}

impl ReductionPrimitive {
    /// Applies the reduction to a flat input vector. Missing replicas are
    /// expected to have been filled with the reduction identity (0) already.
    pub fn apply(self, inputs: &[u64]) -> u64 {
        match self {
            ReductionPrimitive::Sum => inputs.iter().fold(0u64, |a, &x| a.saturating_add(x)),
            ReductionPrimitive::Mean => {
                if inputs.is_empty() {
                    0
                } else {
                    let sum: u128 = inputs.iter().map(|&x| x as u128).sum();
                    (sum / inputs.len() as u128) as u64
                }
            }
            ReductionPrimitive::ArgMin => arg_by(inputs, |a, b| a < b),
            ReductionPrimitive::ArgMax => arg_by(inputs, |a, b| a > b),
            ReductionPrimitive::Max => inputs.iter().copied().max().unwrap_or(0),
            ReductionPrimitive::MinMaxArgMin => {
                let p = inputs.len() / 2;
                let pairs: Vec<u64> = (0..p).map(|i| inputs[i].max(inputs[p + i])).collect();
                arg_by(&pairs, |a, b| a < b)
            }
            ReductionPrimitive::Identity => inputs.first().copied().unwrap_or(0),
        }
    }
}

/// Index of the first element that is "better" than all earlier ones.
fn arg_by(values: &[u64], better: impl Fn(u64, u64) -> bool) -> u64 {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if better(v, values[best]) {
            best = i;
        }
    }
    best as u64
}

impl fmt::Display for ReductionPrimitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ReductionPrimitive::Sum => "Sum",
            ReductionPrimitive::Mean => "Mean",
            ReductionPrimitive::ArgMin => "ArgMin",
            ReductionPrimitive::ArgMax => "ArgMax",
            ReductionPrimitive::Max => "Max",
            ReductionPrimitive::MinMaxArgMin => "MinMaxArgMin",
            ReductionPrimitive::Identity => "Identity",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionSpec {
    pub inputs: Vec<String>,
    pub primitive: ReductionPrimitive,
    pub output_name: String,
}

/// Drop-probability formulas a probabilistic trigger can be bound to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropFormula {
    /// `max(0, (s - target) / s)`, clamped below 1.
    ExcessOver { target: f64 },
}

impl DropFormula {
    pub fn probability(&self, value: f64) -> f64 {
        match *self {
            DropFormula::ExcessOver { target } => {
                if value <= 0.0 {
                    return 0.0;
                }
                ((value - target) / value).clamp(0.0, MAX_DROP_PROBABILITY)
            }
        }
    }
}

/// Upper clamp of any drop probability; a trigger never drops every packet.
pub const MAX_DROP_PROBABILITY: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Predicate {
    GreaterThan(f64),
    LessOrEqual(f64),
    Probabilistic(DropFormula),
    Always,
}

/// Result of evaluating a predicate on a reduced value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerEval {
    Fires(bool),
    /// Fires with the given probability (drawn per packet by the caller).
    Probability(f64),
}

impl Predicate {
    pub fn evaluate(&self, value: u64) -> TriggerEval {
        let v = value as f64;
        match *self {
            Predicate::GreaterThan(t) => TriggerEval::Fires(v > t),
            Predicate::LessOrEqual(t) => TriggerEval::Fires(v <= t),
            Predicate::Probabilistic(formula) => TriggerEval::Probability(formula.probability(v)),
            Predicate::Always => TriggerEval::Fires(true),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    pub name: String,
    pub input: String,
    pub predicate: Predicate,
    pub inconsistency: InconsistencySpec,
    pub activity: String,
}

/// Special egress targets an activity can choose without a reduced value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EgressConst {
    ControllerPort,
    Index(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EgressSource {
    Reduced(String),
    Constant(EgressConst),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    NotifyController(String),
    DropPacket,
    SetEgress(EgressSource),
    InsertFlowRule(EgressSource),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivitySpec {
    pub name: String,
    pub target_class: ScopeFilter,
    pub action: Action,
    pub sequential_group: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplicationSpec {
    pub name: String,
    pub states: Vec<StateSpec>,
    pub reductions: Vec<ReductionSpec>,
    pub triggers: Vec<TriggerSpec>,
    pub activities: Vec<ActivitySpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub element: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Non-fatal findings, e.g. states no reduction or trigger consumes.
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn violation(&mut self, element: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            element: element.to_string(),
            message: message.into(),
        });
    }
}

/// Checks every element invariant and the acyclicity of the element graph.
pub fn validate_application(app: &ApplicationSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut declared: BTreeSet<&str> = BTreeSet::new();

    for s in &app.states {
        if !declared.insert(&s.name) {
            report.violation(&s.name, "duplicate name");
        }
        if s.width_bits == 0 || s.width_bits > STATE_MAX_WIDTH {
            report.violation(
                &s.name,
                format!("width {} outside 1..={STATE_MAX_WIDTH}", s.width_bits),
            );
        }
        if s.value_kind == ValueKind::ScalarArray(0) {
            report.violation(&s.name, "empty scalar array");
        }
    }
    for r in &app.reductions {
        if !declared.insert(&r.output_name) {
            report.violation(&r.output_name, "duplicate name");
        }
    }
    let reduction_by_output: BTreeMap<&str, &ReductionSpec> = app
        .reductions
        .iter()
        .map(|r| (r.output_name.as_str(), r))
        .collect();

    for r in &app.reductions {
        if r.inputs.is_empty() {
            report.violation(&r.output_name, "reduction without inputs");
        }
        for input in &r.inputs {
            if !declared.contains(input.as_str()) {
                report.violation(&r.output_name, format!("undeclared input {input}"));
            }
        }
        if r.primitive == ReductionPrimitive::MinMaxArgMin && r.inputs.len() % 2 != 0 {
            report.violation(
                &r.output_name,
                "MinMaxArgMin needs an even number of inputs",
            );
        }
        if r.primitive == ReductionPrimitive::Identity && r.inputs.len() != 1 {
            report.violation(&r.output_name, "Identity takes exactly one input");
        }
    }
    for cycle in reduction_cycles(&reduction_by_output) {
        let element = cycle[0].to_string();
        let message = if cycle.len() == 2 {
            format!("cycle {}↔{}", cycle[0], cycle[1])
        } else {
            let mut path = cycle.join("→");
            path.push('→');
            path.push_str(cycle[0]);
            format!("cycle {path}")
        };
        report.violation(&element, message);
    }

    let activity_names: BTreeSet<&str> = app.activities.iter().map(|a| a.name.as_str()).collect();
    let mut seen_triggers = BTreeSet::new();
    for t in &app.triggers {
        if !seen_triggers.insert(t.name.as_str()) {
            report.violation(&t.name, "duplicate name");
        }
        if !declared.contains(t.input.as_str()) {
            report.violation(&t.name, format!("undeclared input {}", t.input));
        }
        if !activity_names.contains(t.activity.as_str()) {
            report.violation(&t.name, format!("undeclared activity {}", t.activity));
        }
        match t.predicate {
            Predicate::GreaterThan(x) | Predicate::LessOrEqual(x) if !x.is_finite() => {
                report.violation(&t.name, "threshold must be finite");
            }
            Predicate::Probabilistic(DropFormula::ExcessOver { target })
                if !(target.is_finite() && target > 0.0) =>
            {
                report.violation(&t.name, "drop formula target must be finite and positive");
            }
            _ => {}
        }
        match t.inconsistency {
            InconsistencySpec::TimeObsolescence { epsilon_t } if epsilon_t == Nanos::ZERO => {
                report.violation(&t.name, "epsilon_t must be positive");
            }
            InconsistencySpec::UpdateError {
                epsilon_r,
                max_write_rate,
            } => {
                if epsilon_r == 0 {
                    report.violation(&t.name, "epsilon_r must be at least 1");
                }
                if !(max_write_rate.is_finite() && max_write_rate > 0.0) {
                    report.violation(&t.name, "max_write_rate must be positive");
                }
            }
            _ => {}
        }
    }

    let mut seen_activities = BTreeSet::new();
    for a in &app.activities {
        if !seen_activities.insert(a.name.as_str()) || declared.contains(a.name.as_str()) {
            report.violation(&a.name, "duplicate name");
        }
        let source = match &a.action {
            Action::SetEgress(src) | Action::InsertFlowRule(src) => Some(src),
            _ => None,
        };
        if let Some(EgressSource::Reduced(name)) = source {
            if !declared.contains(name.as_str()) {
                report.violation(&a.name, format!("undeclared input {name}"));
            }
        }
    }

    let consumed: BTreeSet<&str> = app
        .reductions
        .iter()
        .flat_map(|r| r.inputs.iter().map(String::as_str))
        .chain(app.triggers.iter().map(|t| t.input.as_str()))
        .collect();
    for s in &app.states {
        if !consumed.contains(s.name.as_str()) {
            report.warnings.push(Violation {
                element: s.name.clone(),
                message: "state is never consumed".into(),
            });
        }
    }
    report
}

/// Elementary cycles among reductions, each reported once starting from its
/// lexicographically smallest member.
fn reduction_cycles<'a>(by_output: &BTreeMap<&'a str, &'a ReductionSpec>) -> Vec<Vec<&'a str>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    fn visit<'a>(
        node: &'a str,
        by_output: &BTreeMap<&'a str, &'a ReductionSpec>,
        marks: &mut BTreeMap<&'a str, Mark>,
        stack: &mut Vec<&'a str>,
        found: &mut BTreeSet<Vec<&'a str>>,
    ) {
        marks.insert(node, Mark::Grey);
        stack.push(node);
        for input in &by_output[node].inputs {
            let Some((&next, _)) = by_output.get_key_value(input.as_str()) else {
                continue;
            };
            match marks[next] {
                Mark::White => visit(next, by_output, marks, stack, found),
                Mark::Grey => {
                    let start = stack.iter().position(|&n| n == next).unwrap();
                    let mut cycle: Vec<&str> = stack[start..].to_vec();
                    let min = (0..cycle.len()).min_by_key(|&i| cycle[i]).unwrap();
                    cycle.rotate_left(min);
                    found.insert(cycle);
                }
                Mark::Black => {}
            }
        }
        stack.pop();
        marks.insert(node, Mark::Black);
    }

    let mut marks: BTreeMap<&str, Mark> = by_output.keys().map(|&k| (k, Mark::White)).collect();
    let mut found = BTreeSet::new();
    let keys: Vec<&str> = by_output.keys().copied().collect();
    for k in keys {
        if marks[k] == Mark::White {
            visit(k, by_output, &mut marks, &mut Vec::new(), &mut found);
        }
    }
    found.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementKind {
    State,
    Reduction,
    Trigger,
    Activity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagNode {
    pub kind: ElementKind,
    pub name: String,
    /// Identity reduction the builder inserted in front of a trigger.
    pub implicit: bool,
}

/// Element graph of a validated application. Edges point from producer to
/// consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementDag {
    pub app: ApplicationSpec,
    pub nodes: Vec<DagNode>,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, thiserror::Error)]
#[error("application {app} failed validation: {}", report.violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct UnvalidatedApplication {
    pub app: String,
    pub report: ValidationReport,
}

/// Builds the element DAG. Triggers reading a raw state get an implicit
/// identity reduction so every trigger has a reduction parent.
pub fn build_dag(app: &ApplicationSpec) -> Result<ElementDag, UnvalidatedApplication> {
    let report = validate_application(app);
    if !report.is_ok() {
        return Err(UnvalidatedApplication {
            app: app.name.clone(),
            report,
        });
    }

    let mut app = app.clone();
    let state_names: BTreeSet<String> = app.states.iter().map(|s| s.name.clone()).collect();
    for t in &mut app.triggers {
        if state_names.contains(&t.input) {
            let output_name = format!("{}.identity", t.input);
            if !app.reductions.iter().any(|r| r.output_name == output_name) {
                app.reductions.push(ReductionSpec {
                    inputs: vec![t.input.clone()],
                    primitive: ReductionPrimitive::Identity,
                    output_name: output_name.clone(),
                });
            }
            t.input = output_name;
        }
    }

    let mut nodes = Vec::new();
    let mut index = BTreeMap::new();
    let mut push = |kind, name: &str, implicit| {
        index.insert((kind, name.to_string()), nodes.len());
        nodes.push(DagNode {
            kind,
            name: name.to_string(),
            implicit,
        });
    };
    for s in &app.states {
        push(ElementKind::State, &s.name, false);
    }
    for r in &app.reductions {
        let implicit =
            r.primitive == ReductionPrimitive::Identity && r.output_name.ends_with(".identity");
        push(ElementKind::Reduction, &r.output_name, implicit);
    }
    for t in &app.triggers {
        push(ElementKind::Trigger, &t.name, false);
    }
    for a in &app.activities {
        push(ElementKind::Activity, &a.name, false);
    }

    let producer = |name: &str| {
        index
            .get(&(ElementKind::State, name.to_string()))
            .or_else(|| index.get(&(ElementKind::Reduction, name.to_string())))
            .copied()
    };
    let mut edges = BTreeSet::new();
    for r in &app.reductions {
        let to = index[&(ElementKind::Reduction, r.output_name.clone())];
        for input in &r.inputs {
            edges.insert((producer(input).expect("validated"), to));
        }
    }
    for t in &app.triggers {
        let node = index[&(ElementKind::Trigger, t.name.clone())];
        edges.insert((producer(&t.input).expect("validated"), node));
        edges.insert((node, index[&(ElementKind::Activity, t.activity.clone())]));
    }
    for a in &app.activities {
        if let Action::SetEgress(EgressSource::Reduced(src))
        | Action::InsertFlowRule(EgressSource::Reduced(src)) = &a.action
        {
            let to = index[&(ElementKind::Activity, a.name.clone())];
            edges.insert((producer(src).expect("validated"), to));
        }
    }

    Ok(ElementDag {
        app,
        nodes,
        edges: edges.into_iter().collect(),
    })
}

impl ElementDag {
    /// Kahn's algorithm, always releasing the lowest-index ready node.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            indegree[b] += 1;
            out[a].push(b);
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(next) = ready.pop_first() {
            order.push(next);
            for &m in &out[next] {
                indegree[m] -= 1;
                if indegree[m] == 0 {
                    ready.insert(m);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn count(&self, kind: ElementKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// States with no outgoing edge.
    pub fn unused_states(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, n)| {
                n.kind == ElementKind::State && !self.edges.iter().any(|&(a, _)| a == *i)
            })
            .map(|(_, n)| n.name.as_str())
            .collect()
    }

    pub fn node_index(&self, kind: ElementKind, name: &str) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.kind == kind && n.name == name)
    }

    /// Names of the states a reduced value (transitively) depends on.
    pub fn ancestor_states(&self, reduced: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![reduced.to_string()];
        while let Some(name) = stack.pop() {
            if let Some(r) = self.app.reductions.iter().find(|r| r.output_name == name) {
                stack.extend(r.inputs.iter().cloned());
            } else if self.app.states.iter().any(|s| s.name == name) {
                out.insert(name);
            }
        }
        out
    }
}

/// Output of the reference interpreter: every reduced value and every
/// trigger outcome, keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpretation {
    pub reduced: BTreeMap<String, u64>,
    pub triggers: BTreeMap<String, TriggerEval>,
}

impl ApplicationSpec {
    /// Evaluates reductions and triggers directly on named state values.
    /// Array states contribute their elements in order; absent states read 0.
    pub fn interpret(&self, values: &BTreeMap<String, Vec<u64>>) -> Interpretation {
        let mut reduced: BTreeMap<String, u64> = BTreeMap::new();
        let mut pending: Vec<&ReductionSpec> = self.reductions.iter().collect();
        while !pending.is_empty() {
            let before = pending.len();
            pending.retain(|r| {
                let ready = r.inputs.iter().all(|i| {
                    values.contains_key(i)
                        || reduced.contains_key(i)
                        || self.states.iter().any(|s| &s.name == i)
                });
                if !ready {
                    return true;
                }
                let mut flat = Vec::new();
                for i in &r.inputs {
                    if let Some(v) = reduced.get(i) {
                        flat.push(*v);
                    } else if let Some(vs) = values.get(i) {
                        flat.extend_from_slice(vs);
                    } else {
                        flat.push(0);
                    }
                }
                reduced.insert(r.output_name.clone(), r.primitive.apply(&flat));
                false
            });
            if pending.len() == before {
                break;
            }
        }
        let triggers = self
            .triggers
            .iter()
            .map(|t| {
                let v = reduced
                    .get(&t.input)
                    .copied()
                    .or_else(|| values.get(&t.input).and_then(|v| v.first().copied()))
                    .unwrap_or(0);
                (t.name.clone(), t.predicate.evaluate(v))
            })
            .collect();
        Interpretation { reduced, triggers }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(name: &str) -> StateSpec {
        StateSpec::new(name, ScopeFilter::external_syn(), ValueKind::RateEstimate)
    }

    fn notify() -> ActivitySpec {
        ActivitySpec {
            name: "a".into(),
            target_class: ScopeFilter::external(),
            action: Action::NotifyController("x".into()),
            sequential_group: None,
        }
    }

    fn trigger(input: &str) -> TriggerSpec {
        TriggerSpec {
            name: "tr".into(),
            input: input.into(),
            predicate: Predicate::GreaterThan(1.0),
            inconsistency: InconsistencySpec::TimeObsolescence {
                epsilon_t: Nanos::from_millis(1),
            },
            activity: "a".into(),
        }
    }

    #[test]
    fn dangling_trigger_input_is_reported() {
        let app = ApplicationSpec {
            name: "t".into(),
            states: vec![],
            reductions: vec![],
            triggers: vec![trigger("s")],
            activities: vec![notify()],
        };
        let report = validate_application(&app);
        assert!(!report.is_ok());
        assert!(report
            .violations
            .iter()
            .any(|v| v.message == "undeclared input s"));
    }

    #[test]
    fn two_cycle_is_reported() {
        let app = ApplicationSpec {
            name: "t".into(),
            states: vec![state("s")],
            reductions: vec![
                ReductionSpec {
                    inputs: vec!["B".into(), "s".into()],
                    primitive: ReductionPrimitive::Sum,
                    output_name: "A".into(),
                },
                ReductionSpec {
                    inputs: vec!["A".into()],
                    primitive: ReductionPrimitive::Sum,
                    output_name: "B".into(),
                },
            ],
            triggers: vec![trigger("A")],
            activities: vec![notify()],
        };
        let report = validate_application(&app);
        assert!(
            report.violations.iter().any(|v| v.message == "cycle A↔B"),
            "{report:?}"
        );
        assert!(build_dag(&app).is_err());
    }

    #[test]
    fn three_cycle_message() {
        let red = |out: &str, input: &str| ReductionSpec {
            inputs: vec![input.into()],
            primitive: ReductionPrimitive::Max,
            output_name: out.into(),
        };
        let app = ApplicationSpec {
            name: "t".into(),
            states: vec![],
            reductions: vec![red("A", "C"), red("B", "A"), red("C", "B")],
            triggers: vec![],
            activities: vec![],
        };
        let report = validate_application(&app);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].message, "cycle A→C→B→A");
    }

    #[test]
    fn identity_reduction_is_inserted() {
        let app = ApplicationSpec {
            name: "t".into(),
            states: vec![state("s")],
            reductions: vec![],
            triggers: vec![trigger("s")],
            activities: vec![notify()],
        };
        let dag = build_dag(&app).unwrap();
        assert_eq!(dag.nodes.len(), 4);
        assert_eq!(dag.count(ElementKind::Reduction), 1);
        assert!(dag.nodes[1].implicit);
        // state -> identity -> trigger -> activity
        assert_eq!(dag.edges, vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(dag.topological_order(), Some(vec![0, 1, 2, 3]));
    }

    #[test]
    fn unused_state_is_a_warning() {
        let app = ApplicationSpec {
            name: "t".into(),
            states: vec![state("s"), state("idle")],
            reductions: vec![],
            triggers: vec![trigger("s")],
            activities: vec![notify()],
        };
        let report = validate_application(&app);
        assert!(report.is_ok());
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(build_dag(&app).unwrap().unused_states(), vec!["idle"]);
    }

    #[test]
    fn bad_widths_and_budgets() {
        let mut app = ApplicationSpec {
            name: "t".into(),
            states: vec![state("s").width(65)],
            reductions: vec![],
            triggers: vec![trigger("s")],
            activities: vec![notify()],
        };
        app.triggers[0].inconsistency = InconsistencySpec::UpdateError {
            epsilon_r: 0,
            max_write_rate: 0.0,
        };
        app.triggers[0].predicate = Predicate::GreaterThan(f64::NAN);
        let report = validate_application(&app);
        assert_eq!(report.violations.len(), 4, "{report:?}");
    }

    #[test]
    fn reduction_semantics() {
        assert_eq!(ReductionPrimitive::Sum.apply(&[10, 20, 5]), 35);
        assert_eq!(ReductionPrimitive::Mean.apply(&[1, 2, 3, 4]), 2);
        assert_eq!(ReductionPrimitive::ArgMin.apply(&[3, 1, 1]), 1);
        assert_eq!(ReductionPrimitive::ArgMax.apply(&[3, 5, 5]), 1);
        assert_eq!(ReductionPrimitive::Max.apply(&[3, 5, 4]), 5);
        assert_eq!(ReductionPrimitive::MinMaxArgMin.apply(&[9, 1, 1, 2]), 1);
        assert_eq!(ReductionPrimitive::MinMaxArgMin.apply(&[4, 4, 4, 4]), 0);
    }

    #[test]
    fn drop_formula_points() {
        let f = DropFormula::ExcessOver { target: 100.0 };
        assert_eq!(f.probability(100.0), 0.0);
        assert_eq!(f.probability(200.0), 0.5);
        assert_eq!(f.probability(50.0), 0.0);
        assert_eq!(f.probability(0.0), 0.0);
        assert!(f.probability(1e30) < 1.0);
    }

    #[test]
    fn scope_filter_predicate() {
        let f = ScopeFilter::external_syn().with_destinations(["CL1"]);
        let mut view = PacketView {
            entered_domain: true,
            egress_class: None,
            syn: true,
            dst: "CL1",
        };
        assert!(f.matches(&view));
        view.dst = "CL2";
        assert!(!f.matches(&view));
        view.dst = "CL1";
        view.syn = false;
        assert!(!f.matches(&view));
        view.syn = true;
        view.entered_domain = false;
        assert!(!f.matches(&view));
    }
}
