//! Deterministic packet-level discrete-event simulator.
//!
//! Events are ordered by `(time, sequence)`. Links are modelled as two FIFO
//! output queues with serialization and propagation delay; switches run the
//! compiled program against their [`ReplicaStore`] and emit traffic-triggered
//! updates on the replication tree.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::app_model::{
    Action, EgressConst, EgressSource, PacketView, PortClass, SampleUnit, TriggerEval, ValueKind,
};
use crate::compiler::{ActionKind, PrimitiveProgram, StateId};
use crate::embedding::{Embedding, TriggerMode};
use crate::metrics::{
    Detection, FlowInfo, LinkInfo, MetricsLog, Notification, RunInfo, StalenessSample,
};
use crate::replication::{
    decode_update, encode_update, flood_on_tree, maybe_trigger_update, update_frame_bits,
    ApplyOutcome, BitString, ReplicaStore, UpdateHeader, UpdateTrigger, IP_ETHTYPE,
};
use crate::time::Nanos;
use crate::topology::{LinkId, NodeId, NodeKind, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub t_end: Nanos,
    /// Packets a link direction may hold (queued plus in transmission).
    pub queue_limit: usize,
    pub controller_delay: Nanos,
    pub bin: Nanos,
    pub estimator_delta: Nanos,
    pub estimator_window: u32,
    /// Switches emit updates. Disabling it is only useful for comparisons.
    pub replication: bool,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            seed: 1,
            t_end: Nanos::from_secs(10),
            queue_limit: 100,
            controller_delay: Nanos::from_millis(10),
            bin: Nanos::from_secs(1),
            estimator_delta: crate::apps::DEFAULT_DELTA,
            estimator_window: crate::apps::DEFAULT_WINDOW,
            replication: true,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagPattern {
    /// Every packet is a connection request.
    Syn,
    /// Only the first packet of the flow is a connection request.
    FirstSyn,
    None,
}

/// Linear rate change between `start` and `end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ramp {
    pub to_pps: f64,
    pub start: Nanos,
    pub end: Nanos,
}

/// Open-loop constant-rate packet generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub name: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub rate_pps: f64,
    pub size_bits: u64,
    pub start: Nanos,
    pub stop: Nanos,
    pub flags: FlagPattern,
    pub ramp: Option<Ramp>,
}

impl Flow {
    pub fn rate_at(&self, t: Nanos) -> f64 {
        match self.ramp {
            None => self.rate_pps,
            Some(r) if t < r.start => self.rate_pps,
            Some(r) if t >= r.end => r.to_pps,
            Some(r) => {
                let f = (t.0 - r.start.0) as f64 / (r.end.0 - r.start.0) as f64;
                self.rate_pps + f * (r.to_pps - self.rate_pps)
            }
        }
    }
}

/// A value injected into a state at its writer switch.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalWrite {
    pub at: Nanos,
    pub state: StateId,
    pub value: u64,
}

/// Everything a simulation needs besides its configuration.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub scenario: String,
    pub app: String,
    pub topo: Arc<Topology>,
    pub program: Arc<PrimitiveProgram>,
    pub embedding: Embedding,
    /// Monitored traffic must cross a replica (states bound to replicas).
    pub replica_bound: bool,
    /// Node reached by egress index `i` of steering activities.
    pub egress_targets: Vec<NodeId>,
    pub flows: Vec<Flow>,
    pub external: Vec<ExternalWrite>,
    pub replica_count: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event queue corrupted: event at {event} processed after {now}")]
    EventQueueCorruption { event: Nanos, now: Nanos },
}

#[derive(Debug, Clone)]
struct UpdateMeta {
    emitted: Nanos,
    writes: u64,
}

#[derive(Debug, Clone)]
enum Body {
    Data,
    Update {
        wire: BitString,
        meta: Vec<UpdateMeta>,
    },
}

#[derive(Debug, Clone)]
struct Packet {
    id: u64,
    src: NodeId,
    dst: NodeId,
    size_bits: u64,
    syn: bool,
    flow: Option<u32>,
    body: Body,
    waypoint: Option<NodeId>,
    /// Replica that accounts this packet in its states.
    account_at: Option<NodeId>,
    accounted: bool,
    /// Directed links already crossed (update packets only).
    visited: Vec<(LinkId, bool)>,
}

#[derive(Debug)]
enum EventKind {
    Arrive {
        node: NodeId,
        from: NodeId,
        packet: Packet,
    },
    HostSend {
        flow: u32,
    },
    External {
        idx: usize,
    },
    Controller {
        switch: NodeId,
        message: String,
    },
}

#[derive(Debug)]
struct Event {
    time: Nanos,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug, Default)]
struct Channel {
    busy_until: Nanos,
    in_system: VecDeque<Nanos>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Steer {
    Toward(NodeId),
    Controller,
}

#[derive(Debug)]
struct SwitchState {
    store: Option<ReplicaStore>,
    /// Emission triggers for replicated states written here.
    triggers: BTreeMap<StateId, UpdateTrigger>,
    replica_ids: BTreeMap<StateId, u32>,
    is_replica: bool,
    fired: BTreeMap<u32, bool>,
    flow_table: BTreeMap<(NodeId, NodeId), Steer>,
}

#[derive(Debug)]
struct FlowRuntime {
    next_ns: f64,
    sent: u64,
}

pub struct Simulation {
    setup: SimSetup,
    cfg: SimConfig,
    queue: BinaryHeap<Event>,
    seq: u64,
    now: Nanos,
    channels: Vec<Channel>,
    switches: Vec<Option<SwitchState>>,
    flows: Vec<FlowRuntime>,
    rngs: Vec<ChaCha8Rng>,
    log: MetricsLog,
    trace: Vec<String>,
    next_data_id: u64,
    next_update_id: u64,
    /// `(data packet id, switch, egress port)` for every forwarding decision.
    egress_log: Vec<(u64, NodeId, u32)>,
}

/// 64-bit finalizer used to derive independent per-node seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

impl Simulation {
    pub fn new(setup: SimSetup, cfg: SimConfig) -> Simulation {
        let topo = Arc::clone(&setup.topo);
        let emb = &setup.embedding;
        let mut switches: Vec<Option<SwitchState>> = (0..topo.nodes.len()).map(|_| None).collect();
        for sw in topo.switches() {
            let writes: Vec<StateId> = emb
                .placement
                .states
                .iter()
                .filter(|(_, p)| p.writer == sw)
                .map(|(&id, _)| id)
                .collect();
            let held: Vec<StateId> = emb
                .placement
                .states
                .iter()
                .filter(|(_, p)| p.holders.contains(&sw))
                .map(|(&id, _)| id)
                .collect();
            let store = (!held.is_empty()).then(|| {
                ReplicaStore::new(
                    sw,
                    Arc::clone(&setup.program),
                    &writes,
                    &held,
                    (cfg.estimator_delta, cfg.estimator_window),
                )
            });
            let triggers = writes
                .iter()
                .filter_map(|id| {
                    emb.plan
                        .states
                        .get(id)
                        .map(|p| (*id, UpdateTrigger::new(p.mode)))
                })
                .collect();
            let replica_ids = writes
                .iter()
                .map(|id| (*id, emb.placement.states[id].replica_ids[&sw]))
                .collect();
            switches[sw as usize] = Some(SwitchState {
                store,
                triggers,
                replica_ids,
                is_replica: emb.placement.replicas.contains(&sw),
                fired: BTreeMap::new(),
                flow_table: BTreeMap::new(),
            });
        }

        let info = run_info(&setup, &cfg);
        let links = topo
            .links
            .iter()
            .map(|l| LinkInfo {
                a: topo.name(l.a).to_string(),
                b: topo.name(l.b).to_string(),
                capacity_bps: l.capacity_bps,
                core: topo.is_switch(l.a) && topo.is_switch(l.b),
            })
            .collect();
        let flow_info = setup
            .flows
            .iter()
            .map(|f| FlowInfo {
                name: f.name.clone(),
                src: topo.name(f.src).to_string(),
                dst: topo.name(f.dst).to_string(),
            })
            .collect();
        let log = MetricsLog::new(info, links, flow_info);
        let rngs = (0..topo.nodes.len() as u64)
            .map(|n| ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, n)))
            .collect();

        let mut sim = Simulation {
            channels: (0..topo.links.len() * 2)
                .map(|_| Channel::default())
                .collect(),
            switches,
            flows: Vec::new(),
            rngs,
            log,
            trace: Vec::new(),
            queue: BinaryHeap::new(),
            seq: 0,
            now: Nanos::ZERO,
            next_data_id: 0,
            next_update_id: 0,
            egress_log: Vec::new(),
            setup,
            cfg,
        };
        sim.schedule_initial();
        sim
    }

    fn schedule_initial(&mut self) {
        for (i, f) in self.setup.flows.iter().enumerate() {
            let mut rng =
                ChaCha8Rng::seed_from_u64(stream_seed(self.cfg.seed, (1 << 32) | i as u64));
            let rate = f.rate_at(f.start);
            let phase = if rate > 0.0 {
                rng.random::<f64>() * 1e9 / rate
            } else {
                0.0
            };
            let first = f.start.0 as f64 + phase;
            self.flows.push(FlowRuntime {
                next_ns: first,
                sent: 0,
            });
        }
        for i in 0..self.setup.flows.len() {
            let t = Nanos(self.flows[i].next_ns.round() as u64);
            self.push(t, EventKind::HostSend { flow: i as u32 });
        }
        for i in 0..self.setup.external.len() {
            let t = self.setup.external[i].at;
            self.push(t, EventKind::External { idx: i });
        }
    }

    fn push(&mut self, time: Nanos, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn name(&self, n: NodeId) -> &str {
        self.setup.topo.name(n)
    }

    fn trace(&mut self, kind: &str, node: NodeId, detail: impl FnOnce() -> String) {
        if self.cfg.trace {
            let line = format!(
                "{} {} {} {}",
                self.now.0,
                kind,
                self.setup.topo.name(node),
                detail()
            );
            self.trace.push(line);
        }
    }

    /// Processes every event with time ≤ `t_end` and returns the metrics.
    pub fn run_until(mut self, t_end: Nanos) -> Result<SimOutput, SimError> {
        while let Some(top) = self.queue.peek() {
            if top.time > t_end {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            if ev.time < self.now {
                return Err(SimError::EventQueueCorruption {
                    event: ev.time,
                    now: self.now,
                });
            }
            self.now = ev.time;
            self.log.counters.events += 1;
            match ev.kind {
                EventKind::HostSend { flow } => self.host_send(flow),
                EventKind::Arrive { node, from, packet } => self.arrive(node, from, packet),
                EventKind::External { idx } => self.external_write(idx),
                EventKind::Controller { switch, message } => {
                    self.log.notifications.push(Notification {
                        time: self.now,
                        switch: self.name(switch).to_string(),
                        message: message.clone(),
                    });
                    self.trace("notify", switch, || message);
                }
            }
        }
        self.log.counters.data_in_flight = self
            .queue
            .iter()
            .filter(|e| matches!(&e.kind, EventKind::Arrive { packet, .. } if matches!(packet.body, Body::Data)))
            .count() as u64;
        Ok(SimOutput {
            log: self.log,
            trace: self.trace,
            egress_log: self.egress_log,
        })
    }

    fn host_send(&mut self, flow: u32) {
        let f = &self.setup.flows[flow as usize];
        if self.now >= f.stop || self.now > self.cfg.t_end {
            return;
        }
        let rt = &self.flows[flow as usize];
        let syn = match f.flags {
            FlagPattern::Syn => true,
            FlagPattern::FirstSyn => rt.sent == 0,
            FlagPattern::None => false,
        };
        let packet = Packet {
            id: self.next_data_id,
            src: f.src,
            dst: f.dst,
            size_bits: f.size_bits,
            syn,
            flow: Some(flow),
            body: Body::Data,
            waypoint: None,
            account_at: None,
            accounted: false,
            visited: Vec::new(),
        };
        self.next_data_id += 1;
        let (src, size) = (f.src, f.size_bits);
        let rate = f.rate_at(self.now);
        let ramp_start = f.ramp.map(|r| r.start);
        self.log.counters.data_sent += 1;
        let b = self.log.bin_of(self.now);
        self.log.flow_offered[flow as usize][b] += size;
        let id = packet.id;
        self.trace("send", src, || format!("pkt={id} flow={flow}"));
        let peer = self.setup.topo.attachment(src);
        self.transmit(src, peer, packet);

        let rt = &mut self.flows[flow as usize];
        rt.sent += 1;
        if rate > 0.0 {
            rt.next_ns += 1e9 / rate;
        } else if let Some(start) = ramp_start.filter(|s| *s > self.now) {
            rt.next_ns = start.0 as f64;
        } else {
            return;
        }
        let t = Nanos(rt.next_ns.round() as u64);
        self.push(t, EventKind::HostSend { flow });
    }

    fn transmit(&mut self, from: NodeId, to: NodeId, mut packet: Packet) {
        let topo = Arc::clone(&self.setup.topo);
        let port = topo.port_to(from, to).expect("adjacent nodes");
        let link = topo.link(port.link);
        let forward = from == link.a;
        let ch = &mut self.channels[link.id as usize * 2 + usize::from(!forward)];
        while ch.in_system.front().is_some_and(|&f| f <= self.now) {
            ch.in_system.pop_front();
        }
        let is_update = matches!(packet.body, Body::Update { .. });
        if ch.in_system.len() >= self.cfg.queue_limit {
            let loc = format!("{}->{}", topo.name(from), topo.name(to));
            self.log.count_drop("queue", &loc);
            if !is_update {
                self.log.counters.data_dropped += 1;
            }
            let id = packet.id;
            self.trace("drop", from, || format!("pkt={id} reason=queue"));
            return;
        }
        let start = self.now.max(ch.busy_until);
        let finish = start + Nanos::serialization(packet.size_bits, link.capacity_bps);
        ch.busy_until = finish;
        ch.in_system.push_back(finish);
        let arrival = finish + link.delay;
        if is_update {
            let key = (link.id, forward);
            if packet.visited.contains(&key) {
                self.log.counters.loop_violations += 1;
            }
            packet.visited.push(key);
            self.log.counters.update_copies += 1;
        }
        self.log
            .add_link_bits(link.id as usize, start, packet.size_bits, is_update);
        self.push(
            arrival,
            EventKind::Arrive {
                node: to,
                from,
                packet,
            },
        );
    }

    fn arrive(&mut self, node: NodeId, from: NodeId, packet: Packet) {
        match self.setup.topo.node(node).kind {
            NodeKind::Host => {
                if let (Body::Data, Some(flow)) = (&packet.body, packet.flow) {
                    self.log.counters.data_delivered += 1;
                    let b = self.log.bin_of(self.now);
                    self.log.flow_delivered[flow as usize][b] += packet.size_bits;
                    let id = packet.id;
                    self.trace("deliver", node, || format!("pkt={id}"));
                }
            }
            NodeKind::Switch => match packet.body {
                Body::Data => self.switch_data(node, from, packet),
                Body::Update { .. } => self.switch_update(node, from, packet),
            },
            NodeKind::Controller => {}
        }
    }

    fn external_write(&mut self, idx: usize) {
        let w = self.setup.external[idx].clone();
        let Some(p) = self.setup.embedding.placement.states.get(&w.state) else {
            return;
        };
        let node = p.writer;
        if let Some(store) = self.switches[node as usize]
            .as_mut()
            .and_then(|s| s.store.as_mut())
        {
            store.write_scalar(w.state, w.value);
        }
        self.trace("ext", node, || {
            format!("state={} value={}", w.state, w.value)
        });
        self.evaluate_triggers(node, None);
    }

    /// Replica closest to the path from `ingress` to `egress` switch.
    fn best_replica(&self, ingress: NodeId, egress: NodeId) -> NodeId {
        let topo = &self.setup.topo;
        *self
            .setup
            .embedding
            .placement
            .replicas
            .iter()
            .min_by_key(|&&r| {
                (
                    topo.distance(ingress, r)
                        .saturating_add(topo.distance(r, egress)),
                    r,
                )
            })
            .expect("at least one replica")
    }

    fn monitored_scope_matches(&self, view: &PacketView<'_>) -> bool {
        self.setup
            .program
            .states
            .iter()
            .filter(|s| s.target_hint.is_none())
            .any(|s| s.scope.matches(view))
    }

    fn switch_data(&mut self, sw: NodeId, from: NodeId, mut p: Packet) {
        let topo = Arc::clone(&self.setup.topo);
        let program = Arc::clone(&self.setup.program);
        let from_host = !topo.is_switch(from);
        let from_external = from_host && topo.node(from).external;
        let dst_name = topo.name(p.dst).to_string();

        if from_host
            && self.setup.replica_bound
            && !self.setup.embedding.placement.replicas.is_empty()
        {
            let view = PacketView {
                entered_domain: from_external,
                egress_class: None,
                syn: p.syn,
                dst: &dst_name,
            };
            if self.monitored_scope_matches(&view) {
                let egress = topo.attachment(p.dst);
                let r = self.best_replica(sw, egress);
                p.account_at = Some(r);
                if r != sw {
                    p.waypoint = Some(r);
                }
            }
        }
        if p.waypoint == Some(sw) {
            p.waypoint = None;
        }
        let entered = match p.account_at {
            Some(r) => r == sw && !p.accounted,
            None => from_external,
        };
        if p.account_at == Some(sw) {
            p.accounted = true;
        }
        let ingress_view = PacketView {
            entered_domain: entered,
            egress_class: None,
            syn: p.syn,
            dst: &dst_name,
        };

        // (2a) ingress-scoped state writes
        let samples: Vec<(StateId, u64)> = match self.switches[sw as usize]
            .as_ref()
            .and_then(|s| s.store.as_ref())
        {
            Some(store) => store
                .local_states()
                .filter_map(|id| {
                    let st = program.state(id)?;
                    let packet_fed =
                        matches!(st.value_kind, ValueKind::Counter | ValueKind::RateEstimate);
                    let ingress =
                        !matches!(st.scope.port_class, PortClass::Uplink | PortClass::Downlink);
                    (packet_fed && ingress && st.scope.matches(&ingress_view))
                        .then_some((id, sample_amount(st.sample, &p)))
                })
                .collect(),
            None => Vec::new(),
        };
        let now = self.now;
        if let Some(store) = self.switches[sw as usize]
            .as_mut()
            .and_then(|s| s.store.as_mut())
        {
            store.advance(now);
            for (id, amount) in samples {
                store.sample(id, now, amount);
            }
        }

        // (2b) flow rules, triggers and activities
        if let Some(&steer) = self.switches[sw as usize]
            .as_ref()
            .and_then(|s| s.flow_table.get(&(p.src, p.dst)))
        {
            if !self.apply_steer(sw, &mut p, steer) {
                return;
            }
        }
        let verdict = self.evaluate_triggers(sw, Some((&mut p, entered)));
        if verdict == Verdict::Consumed {
            self.maybe_emit_updates(sw);
            return;
        }

        // forwarding
        let target = p.waypoint.unwrap_or_else(|| topo.attachment(p.dst));
        let next = if target == sw {
            Some(p.dst)
        } else {
            topo.next_hop(sw, target)
        };
        let Some(next) = next else {
            self.log.count_drop("no_route", topo.name(sw));
            self.log.counters.data_dropped += 1;
            self.maybe_emit_updates(sw);
            return;
        };
        let port = *topo.port_to(sw, next).expect("adjacent");

        // (2c) egress-scoped state writes
        let egress_view = PacketView {
            entered_domain: entered,
            egress_class: Some(port.class),
            syn: p.syn,
            dst: &dst_name,
        };
        let placement = &self.setup.embedding.placement;
        let egress_samples: Vec<(StateId, u64)> = match self.switches[sw as usize]
            .as_ref()
            .and_then(|s| s.store.as_ref())
        {
            Some(store) => store
                .local_states()
                .filter_map(|id| {
                    let st = program.state(id)?;
                    let packet_fed =
                        matches!(st.value_kind, ValueKind::Counter | ValueKind::RateEstimate);
                    let egress =
                        matches!(st.scope.port_class, PortClass::Uplink | PortClass::Downlink);
                    let peer_ok = placement.states[&id]
                        .port_peer
                        .is_none_or(|peer| peer == next);
                    (packet_fed && egress && peer_ok && st.scope.matches(&egress_view))
                        .then_some((id, sample_amount(st.sample, &p)))
                })
                .collect(),
            None => Vec::new(),
        };
        if let Some(store) = self.switches[sw as usize]
            .as_mut()
            .and_then(|s| s.store.as_mut())
        {
            for (id, amount) in egress_samples {
                store.sample(id, now, amount);
            }
        }

        self.egress_log.push((p.id, sw, port.index));
        let id = p.id;
        self.trace("fwd", sw, || format!("pkt={id} port={}", port.index));
        self.transmit(sw, next, p);
        // (3) traffic-triggered updates run last
        self.maybe_emit_updates(sw);
    }

    /// Re-evaluates the replica's triggers. With a packet, packet-level
    /// activities (drop, steering) are applied to it.
    fn evaluate_triggers(
        &mut self,
        sw: NodeId,
        mut packet: Option<(&mut Packet, bool)>,
    ) -> Verdict {
        let program = Arc::clone(&self.setup.program);
        let Some(state) = self.switches[sw as usize].as_ref() else {
            return Verdict::Forward;
        };
        if !state.is_replica {
            return Verdict::Forward;
        }
        let Some(store) = state.store.as_ref() else {
            return Verdict::Forward;
        };
        let outcomes: Vec<(u32, TriggerEval)> = store.trigger_outcomes().to_vec();
        let reduced: Vec<u64> = store.reduced().to_vec();
        let topo = Arc::clone(&self.setup.topo);
        let mut verdict = Verdict::Forward;
        for (aid, outcome) in outcomes {
            let trig = program.action(aid).expect("trigger");
            let ActionKind::Trigger { activity, .. } = trig.kind else {
                continue;
            };
            let act = program.action(activity).expect("activity");
            let ActionKind::Act { action, target } = &act.kind else {
                continue;
            };
            let fires = match outcome {
                TriggerEval::Fires(b) => {
                    let prev = self.switches[sw as usize]
                        .as_mut()
                        .expect("switch")
                        .fired
                        .insert(aid, b)
                        .unwrap_or(false);
                    if b && !prev {
                        self.log.detections.push(Detection {
                            time: self.now,
                            node: topo.name(sw).to_string(),
                            trigger: trig.name.clone(),
                        });
                        self.trace("detect", sw, || trig.name.clone());
                        if let Action::NotifyController(msg) = action {
                            let at = self.now + self.cfg.controller_delay;
                            self.push(
                                at,
                                EventKind::Controller {
                                    switch: sw,
                                    message: msg.clone(),
                                },
                            );
                        }
                    }
                    b
                }
                TriggerEval::Probability(prob) => {
                    packet.is_some() && prob > 0.0 && self.rngs[sw as usize].random::<f64>() < prob
                }
            };
            if !fires || verdict == Verdict::Consumed {
                continue;
            }
            let Some((p, entered)) = packet.as_mut() else {
                continue;
            };
            let dst_name = topo.name(p.dst).to_string();
            let view = PacketView {
                entered_domain: *entered,
                egress_class: None,
                syn: p.syn,
                dst: &dst_name,
            };
            if !target.matches(&view) {
                continue;
            }
            let steer_of = |src: &EgressSource| -> Option<Steer> {
                match src {
                    EgressSource::Constant(EgressConst::ControllerPort) => Some(Steer::Controller),
                    EgressSource::Constant(EgressConst::Index(i)) => self
                        .setup
                        .egress_targets
                        .get(*i as usize)
                        .map(|&n| Steer::Toward(n)),
                    EgressSource::Reduced(name) => {
                        let slot = program.reduced_slot(name)?;
                        let idx = reduced[slot as usize] as usize;
                        self.setup
                            .egress_targets
                            .get(idx)
                            .map(|&n| Steer::Toward(n))
                    }
                }
            };
            match action {
                Action::NotifyController(_) => {}
                Action::DropPacket => {
                    let name = topo.name(sw).to_string();
                    self.log.count_drop("activity", &name);
                    self.log.counters.data_dropped += 1;
                    let id = p.id;
                    self.trace("drop", sw, || format!("pkt={id} reason=activity"));
                    verdict = Verdict::Consumed;
                }
                Action::SetEgress(src) => {
                    if let Some(steer) = steer_of(src) {
                        if !self.apply_steer(sw, p, steer) {
                            verdict = Verdict::Consumed;
                        }
                    }
                }
                Action::InsertFlowRule(src) => {
                    if let Some(steer) = steer_of(src) {
                        let key = (p.src, p.dst);
                        self.switches[sw as usize]
                            .as_mut()
                            .expect("switch")
                            .flow_table
                            .insert(key, steer);
                        if !self.apply_steer(sw, p, steer) {
                            verdict = Verdict::Consumed;
                        }
                    }
                }
            }
        }
        verdict
    }

    /// Returns false when the packet left the data plane.
    fn apply_steer(&mut self, sw: NodeId, p: &mut Packet, steer: Steer) -> bool {
        match steer {
            Steer::Controller => {
                self.log.counters.data_punted += 1;
                let at = self.now + self.cfg.controller_delay;
                self.push(
                    at,
                    EventKind::Controller {
                        switch: sw,
                        message: "packet-in".into(),
                    },
                );
                false
            }
            Steer::Toward(n) => {
                if self.setup.topo.is_switch(n) {
                    if n != sw {
                        p.waypoint = Some(n);
                    }
                } else {
                    p.dst = n;
                }
                true
            }
        }
    }

    fn maybe_emit_updates(&mut self, sw: NodeId) {
        if !self.cfg.replication {
            return;
        }
        let now = self.now;
        let Some(state) = self.switches[sw as usize].as_mut() else {
            return;
        };
        let Some(store) = state.store.as_ref() else {
            return;
        };
        let mut headers: Vec<UpdateHeader> = Vec::new();
        let mut meta = Vec::new();
        for (&id, trig) in state.triggers.iter_mut() {
            let rid = state.replica_ids.get(&id).copied().unwrap_or(0);
            if let Some(h) = maybe_trigger_update(trig, now, id, store, rid) {
                meta.push(UpdateMeta {
                    emitted: now,
                    writes: store.local(id).map_or(0, |l| l.writes),
                });
                headers.push(h);
            }
        }
        if headers.is_empty() {
            return;
        }
        let Some(ports) = self
            .setup
            .embedding
            .rules
            .switches
            .get(&sw)
            .and_then(|r| r.replication.get(&headers[0].state_id))
            .cloned()
        else {
            return;
        };
        self.log.counters.updates_emitted += headers.len() as u64;
        let size = update_frame_bits(headers.len());
        let wire = encode_update(&headers, IP_ETHTYPE);
        let id = self.next_update_id;
        self.next_update_id += 1;
        let n = headers.len();
        self.trace("upd_emit", sw, || format!("upd={id} headers={n}"));
        let packet = Packet {
            id,
            src: sw,
            dst: sw,
            size_bits: size,
            syn: false,
            flow: None,
            body: Body::Update { wire, meta },
            waypoint: None,
            account_at: None,
            accounted: false,
            visited: Vec::new(),
        };
        let topo = Arc::clone(&self.setup.topo);
        for port in ports {
            let peer = topo.ports[sw as usize][port as usize].peer;
            self.transmit(sw, peer, packet.clone());
        }
    }

    fn switch_update(&mut self, sw: NodeId, from: NodeId, p: Packet) {
        let topo = Arc::clone(&self.setup.topo);
        let Body::Update { wire, meta } = &p.body else {
            return;
        };
        let ingress = topo.port_to(sw, from).expect("adjacent").index;
        let headers = match decode_update(wire) {
            Ok((h, _)) if h.len() == meta.len() => h,
            _ => {
                self.log.count_drop("malformed", topo.name(sw));
                return;
            }
        };
        let rules = self
            .setup
            .embedding
            .rules
            .switches
            .get(&sw)
            .cloned()
            .unwrap_or_default();
        let mut applied_any = false;
        for (h, m) in headers.iter().zip(meta) {
            let holds = self.switches[sw as usize]
                .as_ref()
                .and_then(|s| s.store.as_ref())
                .is_some_and(|s| s.holds(h.state_id));
            if !holds {
                if !rules.replication.contains_key(&h.state_id) {
                    self.log.count_drop("unknown_state", topo.name(sw));
                }
                continue;
            }
            let writer = self
                .setup
                .embedding
                .placement
                .states
                .get(&h.state_id)
                .map(|s| s.writer);
            let origin_writes = writer
                .and_then(|w| self.switches[w as usize].as_ref())
                .and_then(|s| s.store.as_ref())
                .and_then(|s| s.local(h.state_id))
                .map_or(0, |l| l.writes);
            let store = self.switches[sw as usize]
                .as_mut()
                .and_then(|s| s.store.as_mut())
                .expect("holder store");
            match store.apply_update(h, m.emitted, m.writes) {
                ApplyOutcome::Applied { previous } => {
                    applied_any = true;
                    self.log.counters.updates_applied += 1;
                    if let Some(prev) = previous {
                        self.log.staleness.push(StalenessSample {
                            time: self.now,
                            node: topo.name(sw).to_string(),
                            state: h.state_id,
                            staleness: self.now - prev.origin_ts,
                            visibility: self.now - m.emitted,
                            lag_writes: origin_writes.saturating_sub(prev.origin_writes),
                        });
                    }
                    let (sid, v) = (h.state_id, h.state_value);
                    self.trace("upd_apply", sw, || {
                        format!("upd={} state={sid} value={v}", p.id)
                    });
                }
                ApplyOutcome::Stale => self.log.counters.updates_stale += 1,
                ApplyOutcome::UnknownState => self.log.count_drop("unknown_state", topo.name(sw)),
            }
        }
        if applied_any {
            let now = self.now;
            if let Some(store) = self.switches[sw as usize]
                .as_mut()
                .and_then(|s| s.store.as_mut())
            {
                store.advance(now);
            }
            self.evaluate_triggers(sw, None);
        }
        match flood_on_tree(&rules, headers[0].state_id, Some(ingress)) {
            None => {}
            Some(ports) if ports.is_empty() => {}
            Some(ports) => {
                for port in ports {
                    let peer = topo.ports[sw as usize][port as usize].peer;
                    self.transmit(sw, peer, p.clone());
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Forward,
    Consumed,
}

fn sample_amount(unit: SampleUnit, p: &Packet) -> u64 {
    match unit {
        SampleUnit::Packets => 1,
        SampleUnit::Bits => p.size_bits,
    }
}

pub fn run_info(setup: &SimSetup, cfg: &SimConfig) -> RunInfo {
    let topo = &setup.topo;
    let emb = &setup.embedding;
    let states = emb
        .plan
        .states
        .iter()
        .map(|(&id, plan)| {
            let inter_arrival = Nanos((1e9 / emb.plan.r_min).ceil() as u64);
            crate::metrics::StateReport {
                state: id,
                name: setup
                    .program
                    .state(id)
                    .map(|s| s.name.clone())
                    .unwrap_or_default(),
                writer: topo.name(emb.placement.states[&id].writer).to_string(),
                d_r: plan.d_r,
                worst_pair_delay: plan.worst_pair_delay,
                mode: match plan.mode {
                    TriggerMode::TimePeriod(t) => format!("time:{}", t.0),
                    TriggerMode::PacketPeriod(p) => format!("packets:{p}"),
                },
                staleness_bound: plan.d_r + plan.worst_pair_delay + inter_arrival,
            }
        })
        .collect();
    RunInfo {
        scenario: setup.scenario.clone(),
        app: setup.app.clone(),
        replica_count: setup.replica_count,
        replicas: emb
            .placement
            .replicas
            .iter()
            .map(|&r| topo.name(r).to_string())
            .collect(),
        seed: cfg.seed,
        t_end: cfg.t_end,
        bin: cfg.bin,
        r_min: emb.plan.r_min,
        states,
        tree: emb
            .plan
            .tree
            .edges
            .iter()
            .map(|&(a, b)| (topo.name(a).to_string(), topo.name(b).to_string()))
            .collect(),
        memory_bits: emb
            .placement
            .replicas
            .iter()
            .map(|&r| {
                (
                    topo.name(r).to_string(),
                    crate::embedding::replicated_memory_bits(&setup.program, &emb.placement, r),
                )
            })
            .collect(),
        centrality: emb
            .placement
            .centrality
            .iter()
            .map(|(&n, &c)| (topo.name(n).to_string(), c))
            .collect(),
    }
}

/// Result of one simulation run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub log: MetricsLog,
    /// `time_ns kind node detail` lines, when tracing was enabled.
    pub trace: Vec<String>,
    /// `(data packet id, switch, egress port)` per forwarding decision.
    pub egress_log: Vec<(u64, NodeId, u32)>,
}

/// Builds and runs a simulation up to the configured end time.
pub fn simulate(setup: SimSetup, cfg: SimConfig) -> Result<SimOutput, SimError> {
    let t_end = cfg.t_end;
    Simulation::new(setup, cfg).run_until(t_end)
}
