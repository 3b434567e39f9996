//! Replica placement, the shared Steiner tree and the replication period.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use thiserror::Error;

use crate::app_model::InconsistencySpec;
use crate::compiler::{ActionKind, PrimitiveProgram, StateId};
use crate::par;
use crate::time::Nanos;
use crate::topology::{NodeId, Topology};

/// Frame size used for every single-header update packet.
pub const UPDATE_FRAME_BITS: u64 = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("switches are not connected")]
    DisconnectedTopology,
    #[error("terminal {0} cannot be reached from the other terminals")]
    DisconnectedTerminals(String),
    #[error("{requested} replicas requested but only {available} switches exist")]
    InsufficientNodes { requested: usize, available: usize },
    #[error("at least one replica is required")]
    ZeroReplicas,
    #[error("inconsistency budget infeasible: {0}")]
    InfeasibleBudget(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {0} is not a switch")]
    NotASwitch(String),
}

/// Weighted betweenness over switch pairs. Every ordered pair `(s, t)` of
/// distinct switches with positive weight contributes `w(s)·w(t)`, split
/// evenly over all equal-cost shortest paths; both endpoints and every
/// interior switch of a path receive the path's share.
pub fn weighted_betweenness(
    topo: &Topology,
    weights: &BTreeMap<NodeId, f64>,
) -> Result<BTreeMap<NodeId, f64>, EmbeddingError> {
    let switches = topo.switches();
    if let Some(&first) = switches.first() {
        if switches
            .iter()
            .any(|&s| topo.distance(first, s) == u64::MAX)
        {
            return Err(EmbeddingError::DisconnectedTopology);
        }
    }
    let weight = |n: NodeId| weights.get(&n).copied().unwrap_or(0.0).max(0.0);
    let sources: Vec<NodeId> = switches
        .iter()
        .copied()
        .filter(|&s| weight(s) > 0.0)
        .collect();
    let partials = par::map(&sources, |&s| single_source_dependency(topo, s, &weight));
    let mut out: BTreeMap<NodeId, f64> = switches.iter().map(|&s| (s, 0.0)).collect();
    for partial in partials {
        for (n, v) in partial {
            *out.get_mut(&n).expect("switch") += v;
        }
    }
    Ok(out)
}

fn single_source_dependency(
    topo: &Topology,
    s: NodeId,
    weight: &impl Fn(NodeId) -> f64,
) -> Vec<(NodeId, f64)> {
    let n = topo.nodes.len();
    let mut dist = vec![u64::MAX; n];
    let mut sigma = vec![0f64; n];
    let mut preds: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    let mut order = Vec::new();
    let mut settled = vec![false; n];
    dist[s as usize] = 0;
    sigma[s as usize] = 1.0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0u64, s)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if settled[u as usize] || d > dist[u as usize] {
            continue;
        }
        settled[u as usize] = true;
        order.push(u);
        for (v, w) in topo.switch_neighbors(u) {
            let nd = d + w;
            let vi = v as usize;
            if nd < dist[vi] {
                dist[vi] = nd;
                sigma[vi] = sigma[u as usize];
                preds[vi] = vec![u];
                heap.push(Reverse((nd, v)));
            } else if nd == dist[vi] && !settled[vi] {
                sigma[vi] += sigma[u as usize];
                preds[vi].push(u);
            }
        }
    }
    let ws = weight(s);
    let mut delta = vec![0f64; n];
    let mut out = Vec::new();
    let mut endpoint_total = 0.0;
    for &t in order.iter().rev() {
        let ti = t as usize;
        let pair = if t == s { 0.0 } else { ws * weight(t) };
        endpoint_total += pair;
        for &v in &preds[ti] {
            delta[v as usize] += sigma[v as usize] / sigma[ti] * (pair + delta[ti]);
        }
        if t != s {
            out.push((t, delta[ti] + pair));
        }
    }
    out.push((s, endpoint_total));
    out
}

/// Edge set of a Steiner tree, edges stored as `(low id, high id)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SteinerTree {
    pub edges: BTreeSet<(NodeId, NodeId)>,
}

impl SteinerTree {
    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.edges.iter().flat_map(|&(a, b)| [a, b]).collect()
    }

    pub fn cost(&self, topo: &Topology) -> u64 {
        self.edges
            .iter()
            .map(|&(a, b)| topo.link_between(a, b).expect("tree edge").delay.0)
            .sum()
    }

    pub fn neighbors(&self, n: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == n {
                    Some(b)
                } else if b == n {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Node path between two tree nodes, if both are on the tree.
    pub fn path(&self, from: NodeId, to: NodeId) -> Option<Vec<NodeId>> {
        if from == to {
            return Some(vec![from]);
        }
        let mut parent = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        parent.insert(from, from);
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = parent.entry(v) {
                    e.insert(u);
                    if v == to {
                        let mut path = vec![to];
                        let mut cur = to;
                        while cur != from {
                            cur = parent[&cur];
                            path.push(cur);
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(v);
                }
            }
        }
        None
    }

    pub fn is_tree(&self) -> bool {
        let nodes = self.nodes();
        if self.edges.is_empty() {
            return true;
        }
        if self.edges.len() + 1 != nodes.len() {
            return false;
        }
        let first = *nodes.iter().next().expect("non-empty");
        nodes.iter().all(|&n| self.path(first, n).is_some())
    }
}

fn norm(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

/// Prim's algorithm over an explicit weighted edge list; ties broken by
/// `(weight, low id, high id)`.
fn mst(
    nodes: &BTreeSet<NodeId>,
    edges: &BTreeMap<(NodeId, NodeId), u64>,
) -> BTreeSet<(NodeId, NodeId)> {
    let mut out = BTreeSet::new();
    let Some(&start) = nodes.iter().next() else {
        return out;
    };
    let mut inside = BTreeSet::from([start]);
    while inside.len() < nodes.len() {
        let best = edges
            .iter()
            .filter(|(&(a, b), _)| inside.contains(&a) != inside.contains(&b))
            .min_by_key(|(&(a, b), &w)| (w, a, b));
        let Some((&(a, b), _)) = best else {
            break;
        };
        inside.insert(a);
        inside.insert(b);
        out.insert((a, b));
    }
    out
}

/// Metric-closure MST heuristic (2-approximation).
pub fn steiner_tree(
    topo: &Topology,
    terminals: &BTreeSet<NodeId>,
) -> Result<SteinerTree, EmbeddingError> {
    for &t in terminals {
        if t as usize >= topo.nodes.len() {
            return Err(EmbeddingError::UnknownNode(t.to_string()));
        }
        if !topo.is_switch(t) {
            return Err(EmbeddingError::NotASwitch(topo.name(t).to_string()));
        }
    }
    if terminals.len() <= 1 {
        return Ok(SteinerTree::default());
    }
    let first = *terminals.iter().next().expect("non-empty");
    for &t in terminals {
        if topo.distance(first, t) == u64::MAX {
            return Err(EmbeddingError::DisconnectedTerminals(
                topo.name(t).to_string(),
            ));
        }
    }
    let mut closure = BTreeMap::new();
    for &a in terminals {
        for &b in terminals {
            if a < b {
                closure.insert((a, b), topo.distance(a, b));
            }
        }
    }
    let closure_tree = mst(terminals, &closure);
    let mut expanded = BTreeMap::new();
    for &(a, b) in &closure_tree {
        for w in topo.path(a, b).windows(2) {
            let e = norm(w[0], w[1]);
            expanded.insert(e, topo.link_between(e.0, e.1).expect("path edge").delay.0);
        }
    }
    let sub_nodes: BTreeSet<NodeId> = expanded.keys().flat_map(|&(a, b)| [a, b]).collect();
    let mut edges = mst(&sub_nodes, &expanded);
    loop {
        let tree = SteinerTree {
            edges: edges.clone(),
        };
        let leaf = tree
            .nodes()
            .into_iter()
            .find(|n| !terminals.contains(n) && tree.neighbors(*n).len() == 1);
        match leaf {
            Some(l) => edges.retain(|&(a, b)| a != l && b != l),
            None => break,
        }
    }
    Ok(SteinerTree { edges })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerModeKind {
    Time,
    Packet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerMode {
    TimePeriod(Nanos),
    PacketPeriod(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodSolution {
    pub d_r: Nanos,
    pub mode: TriggerMode,
}

/// Largest replication period meeting the budget, plus the traffic-trigger
/// parameter that realizes it given a minimum arrival rate `r_min` (pkt/s).
/// `InconsistencySpec::None` yields `Ok(None)`: nothing to replicate.
pub fn solve_replication_period(
    spec: InconsistencySpec,
    worst_pair_delay: Nanos,
    r_min: f64,
    kind: TriggerModeKind,
) -> Result<Option<PeriodSolution>, EmbeddingError> {
    if !(r_min.is_finite() && r_min > 0.0) {
        return Err(EmbeddingError::InfeasibleBudget(format!(
            "r_min {r_min} must be positive"
        )));
    }
    let budget = match spec {
        InconsistencySpec::None => return Ok(None),
        InconsistencySpec::TimeObsolescence { epsilon_t } => epsilon_t,
        InconsistencySpec::UpdateError {
            epsilon_r,
            max_write_rate,
        } => Nanos((epsilon_r as f64 * 1e9 / max_write_rate).floor() as u64),
    };
    if budget <= worst_pair_delay {
        return Err(EmbeddingError::InfeasibleBudget(format!(
            "budget {budget} does not exceed propagation delay {worst_pair_delay}"
        )));
    }
    let d_r = budget - worst_pair_delay;
    let mode = match kind {
        TriggerModeKind::Time => {
            let inter_arrival = Nanos((1e9 / r_min).ceil() as u64);
            if d_r < inter_arrival {
                return Err(EmbeddingError::InfeasibleBudget(format!(
                    "period {d_r} shorter than one inter-arrival {inter_arrival}"
                )));
            }
            TriggerMode::TimePeriod(d_r - inter_arrival)
        }
        TriggerModeKind::Packet => {
            let p = (d_r.0 as f64 * r_min / 1e9).floor() as u64;
            if p == 0 {
                return Err(EmbeddingError::InfeasibleBudget(format!(
                    "period {d_r} admits no packet at {r_min} pkt/s"
                )));
            }
            TriggerMode::PacketPeriod(p)
        }
    };
    Ok(Some(PeriodSolution { d_r, mode }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub replica_count: usize,
    pub traffic_weights: BTreeMap<NodeId, f64>,
    /// Replica switches fixed by the operator instead of centrality.
    pub pinned_replicas: Option<Vec<NodeId>>,
    pub r_min: f64,
    pub trigger_mode: TriggerModeKind,
}

impl EmbeddingConfig {
    pub fn new(
        replica_count: usize,
        traffic_weights: BTreeMap<NodeId, f64>,
        r_min: f64,
    ) -> EmbeddingConfig {
        EmbeddingConfig {
            replica_count,
            traffic_weights,
            pinned_replicas: None,
            r_min,
            trigger_mode: TriggerModeKind::Time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePlacement {
    /// The only switch that writes the state.
    pub writer: NodeId,
    /// For port-scoped states: the neighbour the measured port faces.
    pub port_peer: Option<NodeId>,
    /// Every switch holding a copy (writer and readers), ascending id.
    pub holders: Vec<NodeId>,
    /// Dense replica id per holder, in holder order.
    pub replica_ids: BTreeMap<NodeId, u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaPlacement {
    /// Switches evaluating triggers and running activities, ascending id.
    pub replicas: Vec<NodeId>,
    pub states: BTreeMap<StateId, StatePlacement>,
    /// Node set per activity action id. Members of a colocation group always
    /// share the same set.
    pub activities: BTreeMap<u32, Vec<NodeId>>,
    pub centrality: BTreeMap<NodeId, f64>,
}

impl ReplicaPlacement {
    pub fn holders_of(&self, state: StateId) -> &[NodeId] {
        self.states
            .get(&state)
            .map(|s| s.holders.as_slice())
            .unwrap_or(&[])
    }

    pub fn all_holders(&self) -> BTreeSet<NodeId> {
        self.states
            .values()
            .flat_map(|s| s.holders.iter().copied())
            .collect()
    }
}

fn resolve(topo: &Topology, name: &str) -> Result<NodeId, EmbeddingError> {
    let id = topo
        .id(name)
        .ok_or_else(|| EmbeddingError::UnknownNode(name.to_string()))?;
    if !topo.is_switch(id) {
        return Err(EmbeddingError::NotASwitch(name.to_string()));
    }
    Ok(id)
}

/// Replica count a program admits: one if any trigger forbids replication.
pub fn effective_replica_count(program: &PrimitiveProgram, requested: usize) -> usize {
    let forbids = program.actions.iter().any(|a| {
        matches!(
            a.kind,
            ActionKind::Trigger {
                inconsistency: InconsistencySpec::None,
                ..
            }
        )
    });
    if forbids {
        1
    } else {
        requested
    }
}

/// Picks the top-C switches by weighted betweenness (lowest id on ties) and
/// binds states to writers. States without a target hint are bound to the
/// replicas round-robin in ascending id order.
pub fn place_replicas(
    topo: &Topology,
    config: &EmbeddingConfig,
    program: &PrimitiveProgram,
) -> Result<ReplicaPlacement, EmbeddingError> {
    let switches = topo.switches();
    let centrality = weighted_betweenness(topo, &config.traffic_weights)?;
    let mut replicas = match &config.pinned_replicas {
        Some(pinned) => {
            for &p in pinned {
                if !topo.is_switch(p) {
                    return Err(EmbeddingError::NotASwitch(topo.name(p).to_string()));
                }
            }
            pinned.clone()
        }
        None => {
            let c = effective_replica_count(program, config.replica_count);
            if c == 0 {
                return Err(EmbeddingError::ZeroReplicas);
            }
            if c > switches.len() {
                return Err(EmbeddingError::InsufficientNodes {
                    requested: c,
                    available: switches.len(),
                });
            }
            let mut ranked = switches.clone();
            ranked.sort_by(|a, b| centrality[b].total_cmp(&centrality[a]).then(a.cmp(b)));
            ranked.truncate(c);
            ranked
        }
    };
    if replicas.is_empty() {
        return Err(EmbeddingError::ZeroReplicas);
    }
    replicas.sort_unstable();
    replicas.dedup();

    let mut states = BTreeMap::new();
    let mut unbound = 0usize;
    for s in &program.states {
        let (writer, port_peer) = match &s.target_hint {
            Some(hint) => match hint.split_once("->") {
                Some((node, peer)) => (
                    resolve(topo, node.trim())?,
                    Some(resolve(topo, peer.trim())?),
                ),
                None => (resolve(topo, hint.trim())?, None),
            },
            None => {
                let w = replicas[unbound % replicas.len()];
                unbound += 1;
                (w, None)
            }
        };
        let mut holders: Vec<NodeId> = replicas.clone();
        holders.push(writer);
        holders.sort_unstable();
        holders.dedup();
        let replica_ids = holders
            .iter()
            .enumerate()
            .map(|(i, &n)| (n, i as u32))
            .collect();
        states.insert(
            s.id,
            StatePlacement {
                writer,
                port_peer,
                holders,
                replica_ids,
            },
        );
    }
    let activities = program
        .actions
        .iter()
        .filter(|a| matches!(a.kind, ActionKind::Act { .. }))
        .map(|a| (a.action_id, replicas.clone()))
        .collect();
    Ok(ReplicaPlacement {
        replicas,
        states,
        activities,
        centrality,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatePlan {
    pub d_r: Nanos,
    pub worst_pair_delay: Nanos,
    pub mode: TriggerMode,
    pub inconsistency: InconsistencySpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationPlan {
    pub tree: SteinerTree,
    /// Only states with more than one holder appear here.
    pub states: BTreeMap<StateId, StatePlan>,
    pub r_min: f64,
}

/// Worst one-way delay between any two holders along the tree: propagation
/// plus serialization of a minimum-size update frame at every hop.
pub fn worst_pair_delay(topo: &Topology, tree: &SteinerTree, holders: &[NodeId]) -> Nanos {
    let mut worst = Nanos::ZERO;
    for (i, &a) in holders.iter().enumerate() {
        for &b in &holders[i + 1..] {
            let path = tree.path(a, b).unwrap_or_else(|| topo.path(a, b));
            let d: u64 = path
                .windows(2)
                .map(|w| {
                    let l = topo.link_between(w[0], w[1]).expect("path edge");
                    l.delay.0 + Nanos::serialization(UPDATE_FRAME_BITS, l.capacity_bps).0
                })
                .sum();
            worst = worst.max(Nanos(d));
        }
    }
    worst
}

/// Tightest budget among the triggers reading each state.
fn budgets(program: &PrimitiveProgram) -> BTreeMap<StateId, Vec<InconsistencySpec>> {
    let mut out: BTreeMap<StateId, Vec<InconsistencySpec>> = BTreeMap::new();
    for a in program.triggers() {
        if let ActionKind::Trigger { inconsistency, .. } = a.kind {
            for s in program.ancestor_states(a.action_id) {
                out.entry(s).or_default().push(inconsistency);
            }
        }
    }
    out
}

/// Builds the shared tree over every holder and solves each state's period.
pub fn plan_replication(
    topo: &Topology,
    placement: &ReplicaPlacement,
    program: &PrimitiveProgram,
    config: &EmbeddingConfig,
) -> Result<ReplicationPlan, EmbeddingError> {
    let replicated: Vec<(StateId, &StatePlacement)> = placement
        .states
        .iter()
        .filter(|(_, p)| p.holders.len() > 1)
        .map(|(&id, p)| (id, p))
        .collect();
    let terminals: BTreeSet<NodeId> = replicated
        .iter()
        .flat_map(|(_, p)| p.holders.iter().copied())
        .collect();
    let tree = steiner_tree(topo, &terminals)?;
    let budgets = budgets(program);
    let mut states = BTreeMap::new();
    for (id, p) in replicated {
        let wpd = worst_pair_delay(topo, &tree, &p.holders);
        let mut best: Option<(PeriodSolution, InconsistencySpec)> = None;
        for &spec in budgets.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
            if let Some(sol) =
                solve_replication_period(spec, wpd, config.r_min, config.trigger_mode)?
            {
                if best.as_ref().is_none_or(|(b, _)| sol.d_r < b.d_r) {
                    best = Some((sol, spec));
                }
            }
        }
        if let Some((sol, spec)) = best {
            states.insert(
                id,
                StatePlan {
                    d_r: sol.d_r,
                    worst_pair_delay: wpd,
                    mode: sol.mode,
                    inconsistency: spec,
                },
            );
        }
    }
    Ok(ReplicationPlan {
        tree,
        states,
        r_min: config.r_min,
    })
}

/// Forwarding state of one switch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SwitchRules {
    /// Tree port indices per replicated state.
    pub replication: BTreeMap<StateId, Vec<u32>>,
    /// Egress port index per destination node (hosts and switches).
    pub forwarding: BTreeMap<NodeId, u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleTables {
    pub switches: BTreeMap<NodeId, SwitchRules>,
}

impl RuleTables {
    pub fn replication_entries(&self) -> usize {
        self.switches.values().map(|r| r.replication.len()).sum()
    }
}

/// One replication entry per state on every tree switch, plus
/// shortest-path forwarding towards every host and switch.
pub fn install_rules(
    placement: &ReplicaPlacement,
    plan: &ReplicationPlan,
    topo: &Topology,
) -> RuleTables {
    let _ = placement;
    let mut switches = BTreeMap::new();
    for sw in topo.switches() {
        let mut rules = SwitchRules::default();
        let tree_ports: Vec<u32> = plan
            .tree
            .neighbors(sw)
            .into_iter()
            .map(|peer| topo.port_to(sw, peer).expect("tree edge").index)
            .collect();
        if !tree_ports.is_empty() {
            for &state in plan.states.keys() {
                rules.replication.insert(state, tree_ports.clone());
            }
        }
        for n in &topo.nodes {
            if n.id == sw {
                continue;
            }
            let target_switch = match n.kind {
                crate::topology::NodeKind::Switch => n.id,
                crate::topology::NodeKind::Host => topo.attachment(n.id),
                crate::topology::NodeKind::Controller => continue,
            };
            let peer = if target_switch == sw {
                Some(n.id)
            } else {
                topo.next_hop(sw, target_switch)
            };
            if let Some(peer) = peer {
                rules
                    .forwarding
                    .insert(n.id, topo.port_to(sw, peer).expect("neighbour").index);
            }
        }
        switches.insert(sw, rules);
    }
    RuleTables { switches }
}

/// Placement, plan and rules for one program on one topology.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub placement: ReplicaPlacement,
    pub plan: ReplicationPlan,
    pub rules: RuleTables,
}

pub fn embed(
    topo: &Topology,
    program: &PrimitiveProgram,
    config: &EmbeddingConfig,
) -> Result<Embedding, EmbeddingError> {
    let placement = place_replicas(topo, config, program)?;
    let plan = plan_replication(topo, &placement, program, config)?;
    let rules = install_rules(&placement, &plan, topo);
    Ok(Embedding {
        placement,
        plan,
        rules,
    })
}

/// Register bits a switch spends on replicated state: one slot per state it
/// holds plus one register per reduction output evaluated there.
pub fn replicated_memory_bits(
    program: &PrimitiveProgram,
    placement: &ReplicaPlacement,
    node: NodeId,
) -> u64 {
    let mut bits = 0u64;
    for s in &program.states {
        if placement.holders_of(s.id).contains(&node) {
            let elems = match s.value_kind {
                crate::app_model::ValueKind::ScalarArray(n) => n as u64,
                _ => 1,
            };
            bits += s.width_bits as u64 * elems;
        }
    }
    if placement.replicas.contains(&node) {
        let width = program
            .states
            .iter()
            .map(|s| s.width_bits)
            .max()
            .unwrap_or(0) as u64;
        bits += width * program.reduction_count() as u64;
    }
    bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::TopologyBuilder;

    fn line() -> Topology {
        let mut b = TopologyBuilder::new();
        b.switch("A").switch("B").switch("C");
        let d = Nanos::from_micros(100);
        b.link("A", "B", d, 1_000_000).link("B", "C", d, 1_000_000);
        b.build().unwrap()
    }

    #[test]
    fn line_center_wins() {
        let t = line();
        let w = (0..3).map(|n| (n, 1.0)).collect();
        let c = weighted_betweenness(&t, &w).unwrap();
        assert!(c[&1] > c[&0] && c[&1] > c[&2]);
        assert_eq!(c[&0], c[&2]);
    }

    #[test]
    fn period_examples() {
        let s = solve_replication_period(
            InconsistencySpec::TimeObsolescence {
                epsilon_t: Nanos::from_micros(200),
            },
            Nanos::from_micros(50),
            1e6,
            TriggerModeKind::Time,
        )
        .unwrap()
        .unwrap();
        assert_eq!(s.d_r, Nanos::from_micros(150));
        assert_eq!(s.mode, TriggerMode::TimePeriod(Nanos::from_micros(149)));

        let s = solve_replication_period(
            InconsistencySpec::UpdateError {
                epsilon_r: 10,
                max_write_rate: 1e5,
            },
            Nanos::ZERO,
            1e6,
            TriggerModeKind::Packet,
        )
        .unwrap()
        .unwrap();
        assert_eq!(s.d_r, Nanos::from_micros(100));
        assert_eq!(s.mode, TriggerMode::PacketPeriod(100));

        let e = solve_replication_period(
            InconsistencySpec::TimeObsolescence {
                epsilon_t: Nanos::from_micros(10),
            },
            Nanos::from_micros(50),
            1e6,
            TriggerModeKind::Time,
        );
        assert!(matches!(e, Err(EmbeddingError::InfeasibleBudget(_))));
    }

    #[test]
    fn single_terminal_tree_is_empty() {
        let t = line();
        let tree = steiner_tree(&t, &BTreeSet::from([1])).unwrap();
        assert!(tree.edges.is_empty());
    }

    #[test]
    fn tree_path_walks_edges() {
        let tree = SteinerTree {
            edges: BTreeSet::from([(0, 1), (1, 2)]),
        };
        assert_eq!(tree.path(0, 2), Some(vec![0, 1, 2]));
        assert_eq!(tree.path(2, 0), Some(vec![2, 1, 0]));
        assert!(tree.is_tree());
    }
}
