//! Lowering of an element DAG to primitive data structures and actions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::app_model::{
    Action, ElementDag, ElementKind, InconsistencySpec, Predicate, ReductionPrimitive, SampleUnit,
    ScopeFilter, TriggerEval, ValueKind,
};

/// Network-wide state identifier, carried in the `stateID` wire field.
pub type StateId = u32;

/// Basic building blocks a device class offers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Primitive {
    Register,
    CircularBuffer,
    Counter,
    Sum,
    Mean,
    ArgMin,
    ArgMax,
    Max,
    MinMaxArgMin,
    GreaterThan,
    LessOrEqual,
    Probabilistic,
    Always,
    NotifyController,
    DropPacket,
    SetEgress,
    InsertFlowRule,
}

impl Primitive {
    pub const ALL: [Primitive; 17] = [
        Primitive::Register,
        Primitive::CircularBuffer,
        Primitive::Counter,
        Primitive::Sum,
        Primitive::Mean,
        Primitive::ArgMin,
        Primitive::ArgMax,
        Primitive::Max,
        Primitive::MinMaxArgMin,
        Primitive::GreaterThan,
        Primitive::LessOrEqual,
        Primitive::Probabilistic,
        Primitive::Always,
        Primitive::NotifyController,
        Primitive::DropPacket,
        Primitive::SetEgress,
        Primitive::InsertFlowRule,
    ];
}

/// Flat capability set of a (homogeneous) device class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capabilities(pub BTreeSet<Primitive>);

impl Capabilities {
    pub fn all() -> Capabilities {
        Capabilities(Primitive::ALL.into_iter().collect())
    }

    pub fn of(prims: &[Primitive]) -> Capabilities {
        Capabilities(prims.iter().copied().collect())
    }

    pub fn supports(&self, p: Primitive) -> bool {
        self.0.contains(&p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    State(StateId),
    /// Program-local register holding a reduced value.
    Reduced(u32),
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::State(id) => write!(f, "s{id}"),
            Slot::Reduced(i) => write!(f, "r{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataStructureKind {
    Register,
    CircularBuffer(u32),
    Counter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataStructure {
    pub slot: Slot,
    pub kind: DataStructureKind,
    pub width_bits: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionKind {
    /// Reduction into `output`. Mean is lowered to a sum followed by a right
    /// shift of `shift` bits.
    Reduce {
        primitive: ReductionPrimitive,
        shift: u32,
        output: u32,
    },
    Trigger {
        predicate: Predicate,
        inconsistency: InconsistencySpec,
        activity: u32,
    },
    /// Activity applied to packets matching `target`.
    Act { action: Action, target: ScopeFilter },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveAction {
    pub action_id: u32,
    pub name: String,
    pub kind: ActionKind,
    pub operands: Vec<Slot>,
}

/// A state as the compiled program sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBinding {
    pub id: StateId,
    pub name: String,
    pub scope: ScopeFilter,
    pub value_kind: ValueKind,
    pub width_bits: u32,
    pub target_hint: Option<String>,
    pub sample: SampleUnit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveProgram {
    pub app: String,
    pub states: Vec<StateBinding>,
    pub data_structures: Vec<DataStructure>,
    pub actions: Vec<PrimitiveAction>,
    pub colocation_groups: Vec<Vec<u32>>,
    /// Rate-estimator window length used for `CircularBuffer` expansion.
    pub estimator_window: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompileError {
    #[error("element {0} needs a primitive the devices do not offer")]
    UnsupportedPrimitive(String),
    #[error("reduction {element}: Mean over {inputs} inputs cannot be lowered to a shift")]
    NonPowerOfTwoMean { element: String, inputs: usize },
    #[error("empty capability set")]
    NoCapabilities,
    #[error("dag has no topological order")]
    Cyclic,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("state identifier space exhausted")]
    RegistryExhausted,
}

/// Lowers an element DAG. States receive provisional ids `0..n` in
/// declaration order; [`assign_state_ids`] makes them network-wide.
pub fn compile(
    dag: &ElementDag,
    caps: &Capabilities,
    estimator_window: u32,
) -> Result<PrimitiveProgram, CompileError> {
    if caps.0.is_empty() {
        return Err(CompileError::NoCapabilities);
    }
    if dag.topological_order().is_none() {
        return Err(CompileError::Cyclic);
    }
    let app = &dag.app;
    let require = |p: Primitive, element: &str| {
        if caps.supports(p) {
            Ok(())
        } else {
            Err(CompileError::UnsupportedPrimitive(element.to_string()))
        }
    };

    let mut states = Vec::new();
    let mut data_structures = Vec::new();
    let mut slots: BTreeMap<&str, Slot> = BTreeMap::new();
    let mut width_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in app.states.iter().enumerate() {
        let id = i as StateId;
        let slot = Slot::State(id);
        slots.insert(&s.name, slot);
        width_of.insert(
            &s.name,
            match s.value_kind {
                ValueKind::ScalarArray(n) => n as usize,
                _ => 1,
            },
        );
        states.push(StateBinding {
            id,
            name: s.name.clone(),
            scope: s.scope.clone(),
            value_kind: s.value_kind,
            width_bits: s.width_bits,
            target_hint: s.target_hint.clone(),
            sample: s.sample,
        });
        let mut ds = |kind, width_bits| {
            data_structures.push(DataStructure {
                slot,
                kind,
                width_bits,
                name: s.name.clone(),
            })
        };
        match s.value_kind {
            ValueKind::Counter => {
                require(Primitive::Counter, &s.name)?;
                ds(DataStructureKind::Counter, s.width_bits);
            }
            ValueKind::RateEstimate => {
                require(Primitive::CircularBuffer, &s.name)?;
                require(Primitive::Register, &s.name)?;
                ds(
                    DataStructureKind::CircularBuffer(estimator_window),
                    s.width_bits,
                );
                ds(DataStructureKind::Register, s.width_bits);
            }
            ValueKind::Scalar => {
                require(Primitive::Register, &s.name)?;
                ds(DataStructureKind::Register, s.width_bits);
            }
            ValueKind::ScalarArray(n) => {
                require(Primitive::Register, &s.name)?;
                ds(DataStructureKind::Register, s.width_bits * n);
            }
        }
    }

    // Reductions in dependency order.
    let order = dag.topological_order().expect("checked above");
    let mut actions = Vec::new();
    let mut next_reduced = 0u32;
    for &node in &order {
        let n = &dag.nodes[node];
        if n.kind != ElementKind::Reduction {
            continue;
        }
        let r = app
            .reductions
            .iter()
            .find(|r| r.output_name == n.name)
            .expect("dag node without reduction");
        let mut shift = 0;
        match r.primitive {
            ReductionPrimitive::Sum => require(Primitive::Sum, &r.output_name)?,
            ReductionPrimitive::Mean => {
                require(Primitive::Mean, &r.output_name)?;
                let count: usize = r
                    .inputs
                    .iter()
                    .map(|i| width_of.get(i.as_str()).copied().unwrap_or(1))
                    .sum();
                if !count.is_power_of_two() {
                    return Err(CompileError::NonPowerOfTwoMean {
                        element: r.output_name.clone(),
                        inputs: count,
                    });
                }
                shift = count.trailing_zeros();
            }
            ReductionPrimitive::ArgMin => require(Primitive::ArgMin, &r.output_name)?,
            ReductionPrimitive::ArgMax => require(Primitive::ArgMax, &r.output_name)?,
            ReductionPrimitive::Max => require(Primitive::Max, &r.output_name)?,
            ReductionPrimitive::MinMaxArgMin => require(Primitive::MinMaxArgMin, &r.output_name)?,
            ReductionPrimitive::Identity => require(Primitive::Register, &r.output_name)?,
        }
        let output = next_reduced;
        next_reduced += 1;
        let operands = r.inputs.iter().map(|i| slots[i.as_str()]).collect();
        data_structures.push(DataStructure {
            slot: Slot::Reduced(output),
            kind: DataStructureKind::Register,
            width_bits: crate::app_model::STATE_MAX_WIDTH,
            name: r.output_name.clone(),
        });
        slots.insert(&r.output_name, Slot::Reduced(output));
        width_of.insert(&r.output_name, 1);
        actions.push(PrimitiveAction {
            action_id: actions.len() as u32,
            name: r.output_name.clone(),
            kind: ActionKind::Reduce {
                primitive: r.primitive,
                shift,
                output,
            },
            operands,
        });
    }

    // Activities first so triggers can point at them.
    let first_act = actions.len() as u32;
    let mut act_ids = BTreeMap::new();
    for (i, a) in app.activities.iter().enumerate() {
        let prim = match &a.action {
            Action::NotifyController(_) => Primitive::NotifyController,
            Action::DropPacket => Primitive::DropPacket,
            Action::SetEgress(_) => Primitive::SetEgress,
            Action::InsertFlowRule(_) => Primitive::InsertFlowRule,
        };
        require(prim, &a.name)?;
        let operands = match &a.action {
            Action::SetEgress(crate::app_model::EgressSource::Reduced(src))
            | Action::InsertFlowRule(crate::app_model::EgressSource::Reduced(src)) => {
                vec![slots[src.as_str()]]
            }
            _ => vec![],
        };
        let id = first_act + i as u32;
        act_ids.insert(a.name.as_str(), id);
        actions.push(PrimitiveAction {
            action_id: id,
            name: a.name.clone(),
            kind: ActionKind::Act {
                action: a.action.clone(),
                target: a.target_class.clone(),
            },
            operands,
        });
    }
    for t in &app.triggers {
        let prim = match t.predicate {
            Predicate::GreaterThan(_) => Primitive::GreaterThan,
            Predicate::LessOrEqual(_) => Primitive::LessOrEqual,
            Predicate::Probabilistic(_) => Primitive::Probabilistic,
            Predicate::Always => Primitive::Always,
        };
        require(prim, &t.name)?;
        actions.push(PrimitiveAction {
            action_id: actions.len() as u32,
            name: t.name.clone(),
            kind: ActionKind::Trigger {
                predicate: t.predicate,
                inconsistency: t.inconsistency,
                activity: act_ids[t.activity.as_str()],
            },
            operands: vec![slots[t.input.as_str()]],
        });
    }

    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for a in &app.activities {
        if let Some(g) = a.sequential_group {
            groups.entry(g).or_default().push(act_ids[a.name.as_str()]);
        }
    }

    Ok(PrimitiveProgram {
        app: app.name.clone(),
        states,
        data_structures,
        actions,
        colocation_groups: groups.into_values().collect(),
        estimator_window,
    })
}

/// Controller-side allocator of network-wide state identifiers.
///
/// States are keyed by name and scope, so applications declaring the same
/// state share one identifier.
#[derive(Debug, Clone, Default)]
pub struct IdRegistry {
    next: u64,
    by_key: BTreeMap<(String, ScopeFilter), StateId>,
}

impl IdRegistry {
    pub fn new() -> IdRegistry {
        IdRegistry::default()
    }

    /// A registry whose next fresh id is `first`.
    pub fn starting_at(first: u32) -> IdRegistry {
        IdRegistry {
            next: first as u64,
            by_key: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    pub fn lookup(&self, name: &str, scope: &ScopeFilter) -> Option<StateId> {
        self.by_key.get(&(name.to_string(), scope.clone())).copied()
    }

    fn allocate(&mut self, name: &str, scope: &ScopeFilter) -> Result<StateId, RegistryError> {
        if let Some(id) = self.lookup(name, scope) {
            return Ok(id);
        }
        if self.next > u32::MAX as u64 - 1 {
            return Err(RegistryError::RegistryExhausted);
        }
        let id = self.next as StateId;
        self.next += 1;
        self.by_key.insert((name.to_string(), scope.clone()), id);
        Ok(id)
    }
}

/// Replaces provisional state ids with registry-assigned network-wide ids.
pub fn assign_state_ids(
    mut program: PrimitiveProgram,
    registry: &mut IdRegistry,
) -> Result<PrimitiveProgram, RegistryError> {
    let mut remap = BTreeMap::new();
    for s in &mut program.states {
        let id = registry.allocate(&s.name, &s.scope)?;
        remap.insert(s.id, id);
        s.id = id;
    }
    let fix = |slot: &mut Slot| {
        if let Slot::State(id) = slot {
            *id = remap[id];
        }
    };
    for ds in &mut program.data_structures {
        fix(&mut ds.slot);
    }
    for a in &mut program.actions {
        a.operands.iter_mut().for_each(fix);
    }
    Ok(program)
}

/// Outcome of running a program on concrete state values.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramEval {
    /// Reduced registers, indexed by `Slot::Reduced` index.
    pub reduced: Vec<u64>,
    /// `(trigger action id, outcome)` in program order.
    pub triggers: Vec<(u32, TriggerEval)>,
}

impl PrimitiveProgram {
    pub fn state(&self, id: StateId) -> Option<&StateBinding> {
        self.states.iter().find(|s| s.id == id)
    }

    pub fn state_by_name(&self, name: &str) -> Option<&StateBinding> {
        self.states.iter().find(|s| s.name == name)
    }

    pub fn action(&self, id: u32) -> Option<&PrimitiveAction> {
        self.actions.iter().find(|a| a.action_id == id)
    }

    pub fn reduction_count(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| matches!(a.kind, ActionKind::Reduce { .. }))
            .count()
    }

    pub fn triggers(&self) -> impl Iterator<Item = &PrimitiveAction> {
        self.actions
            .iter()
            .filter(|a| matches!(a.kind, ActionKind::Trigger { .. }))
    }

    /// State ids an action reads, directly or through reductions.
    pub fn ancestor_states(&self, action_id: u32) -> BTreeSet<StateId> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<Slot> = self
            .action(action_id)
            .map(|a| a.operands.clone())
            .unwrap_or_default();
        while let Some(slot) = stack.pop() {
            match slot {
                Slot::State(id) => {
                    out.insert(id);
                }
                Slot::Reduced(i) => {
                    let producer = self.actions.iter().find(
                        |a| matches!(a.kind, ActionKind::Reduce { output, .. } if output == i),
                    );
                    if let Some(a) = producer {
                        stack.extend(a.operands.iter().copied());
                    }
                }
            }
        }
        out
    }

    /// Reduced slot index holding the output named `name`.
    pub fn reduced_slot(&self, name: &str) -> Option<u32> {
        self.actions.iter().find_map(|a| match a.kind {
            ActionKind::Reduce { output, .. } if a.name == name => Some(output),
            _ => None,
        })
    }

    /// Runs every reduce and trigger action. `read` appends the current
    /// value(s) of a state to the buffer it is given.
    pub fn evaluate(&self, mut read: impl FnMut(StateId, &mut Vec<u64>)) -> ProgramEval {
        let n_reduced = self
            .actions
            .iter()
            .filter(|a| matches!(a.kind, ActionKind::Reduce { .. }))
            .count();
        let mut reduced = vec![0u64; n_reduced];
        let mut triggers = Vec::new();
        let mut buf = Vec::new();
        for a in &self.actions {
            match &a.kind {
                ActionKind::Reduce {
                    primitive,
                    shift,
                    output,
                } => {
                    buf.clear();
                    for op in &a.operands {
                        match *op {
                            Slot::State(id) => read(id, &mut buf),
                            Slot::Reduced(i) => buf.push(reduced[i as usize]),
                        }
                    }
                    reduced[*output as usize] = match primitive {
                        ReductionPrimitive::Mean => {
                            let sum: u128 = buf.iter().map(|&x| x as u128).sum();
                            (sum >> shift) as u64
                        }
                        p => p.apply(&buf),
                    };
                }
                ActionKind::Trigger { predicate, .. } => {
                    let v = match a.operands[0] {
                        Slot::Reduced(i) => reduced[i as usize],
                        Slot::State(id) => {
                            buf.clear();
                            read(id, &mut buf);
                            buf.first().copied().unwrap_or(0)
                        }
                    };
                    triggers.push((a.action_id, predicate.evaluate(v)));
                }
                ActionKind::Act { .. } => {}
            }
        }
        ProgramEval { reduced, triggers }
    }

    /// Canonical, line-oriented rendering used for golden files.
    pub fn to_canonical_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "program {}", self.app);
        for s in &self.states {
            let _ = writeln!(
                out,
                "state {} name={} kind={:?} width={}",
                s.id, s.name, s.value_kind, s.width_bits
            );
        }
        for ds in &self.data_structures {
            let kind = match ds.kind {
                DataStructureKind::Register => "Register".to_string(),
                DataStructureKind::CircularBuffer(w) => format!("CircularBuffer({w})"),
                DataStructureKind::Counter => "Counter".to_string(),
            };
            let _ = writeln!(
                out,
                "ds {} {} width={} name={}",
                ds.slot, kind, ds.width_bits, ds.name
            );
        }
        for a in &self.actions {
            let kind = match &a.kind {
                ActionKind::Reduce {
                    primitive,
                    shift,
                    output,
                } => {
                    format!("Reduce({primitive}) shift={shift} out=r{output}")
                }
                ActionKind::Trigger {
                    predicate,
                    activity,
                    ..
                } => format!("Trigger({predicate:?}) activity={activity}"),
                ActionKind::Act { action, .. } => format!("Act({action:?})"),
            };
            let ops: Vec<String> = a.operands.iter().map(ToString::to_string).collect();
            let _ = writeln!(
                out,
                "action {} {} {} operands=[{}]",
                a.action_id,
                a.name,
                kind,
                ops.join(",")
            );
        }
        for g in &self.colocation_groups {
            let ids: Vec<String> = g.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "coloc [{}]", ids.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app_model::*;
    use crate::time::Nanos;

    fn tiny(primitive: ReductionPrimitive, n: usize) -> ApplicationSpec {
        ApplicationSpec {
            name: "tiny".into(),
            states: (0..n)
                .map(|i| StateSpec::new(format!("s{i}"), ScopeFilter::any(), ValueKind::Scalar))
                .collect(),
            reductions: vec![ReductionSpec {
                inputs: (0..n).map(|i| format!("s{i}")).collect(),
                primitive,
                output_name: "r".into(),
            }],
            triggers: vec![TriggerSpec {
                name: "t".into(),
                input: "r".into(),
                predicate: Predicate::GreaterThan(3.0),
                inconsistency: InconsistencySpec::TimeObsolescence {
                    epsilon_t: Nanos::from_millis(1),
                },
                activity: "a".into(),
            }],
            activities: vec![ActivitySpec {
                name: "a".into(),
                target_class: ScopeFilter::any(),
                action: Action::DropPacket,
                sequential_group: None,
            }],
        }
    }

    #[test]
    fn missing_mean_capability() {
        let dag = build_dag(&tiny(ReductionPrimitive::Mean, 4)).unwrap();
        let mut caps = Capabilities::all();
        caps.0.remove(&Primitive::Mean);
        assert_eq!(
            compile(&dag, &caps, 8),
            Err(CompileError::UnsupportedPrimitive("r".into()))
        );
    }

    #[test]
    fn mean_needs_power_of_two() {
        let dag = build_dag(&tiny(ReductionPrimitive::Mean, 3)).unwrap();
        assert!(matches!(
            compile(&dag, &Capabilities::all(), 8),
            Err(CompileError::NonPowerOfTwoMean { inputs: 3, .. })
        ));
        let dag = build_dag(&tiny(ReductionPrimitive::Mean, 4)).unwrap();
        let prog = compile(&dag, &Capabilities::all(), 8).unwrap();
        assert!(matches!(
            prog.actions[0].kind,
            ActionKind::Reduce { shift: 2, .. }
        ));
    }

    #[test]
    fn empty_capabilities_rejected() {
        let dag = build_dag(&tiny(ReductionPrimitive::Sum, 2)).unwrap();
        assert_eq!(
            compile(&dag, &Capabilities(BTreeSet::new()), 8),
            Err(CompileError::NoCapabilities)
        );
    }

    #[test]
    fn fresh_registry_ids_are_dense() {
        let dag = build_dag(&tiny(ReductionPrimitive::Sum, 4)).unwrap();
        let prog = compile(&dag, &Capabilities::all(), 8).unwrap();
        let mut reg = IdRegistry::new();
        let prog = assign_state_ids(prog, &mut reg).unwrap();
        let ids: Vec<_> = prog.states.iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn registry_exhaustion() {
        let dag = build_dag(&tiny(ReductionPrimitive::Sum, 2)).unwrap();
        let prog = compile(&dag, &Capabilities::all(), 8).unwrap();
        let mut reg = IdRegistry::starting_at(u32::MAX - 1);
        assert_eq!(
            assign_state_ids(prog, &mut reg).unwrap_err(),
            RegistryError::RegistryExhausted
        );
    }

    #[test]
    fn canonical_text_is_stable() {
        let dag = build_dag(&tiny(ReductionPrimitive::Sum, 2)).unwrap();
        let prog = compile(&dag, &Capabilities::all(), 8).unwrap();
        let text = prog.to_canonical_text();
        assert_eq!(
            text,
            "program tiny\n\
             state 0 name=s0 kind=Scalar width=32\n\
             state 1 name=s1 kind=Scalar width=32\n\
             ds s0 Register width=32 name=s0\n\
             ds s1 Register width=32 name=s1\n\
             ds r0 Register width=64 name=r\n\
             action 0 r Reduce(Sum) shift=0 out=r0 operands=[s0,s1]\n\
             action 1 a Act(DropPacket) operands=[]\n\
             action 2 t Trigger(GreaterThan(3.0)) activity=1 operands=[r0]\n"
        );
    }
}
