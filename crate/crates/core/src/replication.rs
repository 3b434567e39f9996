//! Update wire format, traffic-triggered update generation, per-switch
//! replica stores and tree flooding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::app_model::{TriggerEval, ValueKind};
use crate::apps::RateEstimatorWindow;
use crate::compiler::{PrimitiveProgram, ProgramEval, StateId};
use crate::embedding::{SwitchRules, TriggerMode};
use crate::time::Nanos;
use crate::topology::NodeId;

/// Protocol type announcing another update header.
pub const LOADER_ETHTYPE: u16 = 0x88B5;
pub const IP_ETHTYPE: u16 = 0x0800;
pub const HEADER_BITS: usize = 208;
const HEADER_BYTES: usize = HEADER_BITS / 8;
/// Ethernet header plus FCS.
pub const FRAME_OVERHEAD_BITS: u64 = 144;
pub const MIN_FRAME_BITS: u64 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UpdateHeader {
    pub src_sw_id: u32,
    pub dst_sw_id: u32,
    pub state_id: u32,
    pub replica_id: u32,
    pub state_value: u64,
    pub l3_protocol_type: u16,
}

/// A bit string whose length need not be a multiple of eight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitString {
    bytes: Vec<u8>,
    len_bits: usize,
}

impl BitString {
    pub fn from_bytes(bytes: Vec<u8>) -> BitString {
        let len_bits = bytes.len() * 8;
        BitString { bytes, len_bits }
    }

    /// Keeps the first `len_bits` bits.
    pub fn truncated(mut self, len_bits: usize) -> BitString {
        let len_bits = len_bits.min(self.len_bits);
        self.bytes.truncate(len_bits.div_ceil(8));
        if !len_bits.is_multiple_of(8) {
            let keep = 0xFFu8 << (8 - len_bits % 8);
            *self.bytes.last_mut().expect("non-empty") &= keep;
        }
        self.len_bits = len_bits;
        self
    }

    pub fn len_bits(&self) -> usize {
        self.len_bits
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(self.bytes.len() * 2);
        for b in &self.bytes {
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error(
        "truncated update header at bit {offset}: {available} bits left, {HEADER_BITS} needed"
    )]
    TruncatedHeader { offset: usize, available: usize },
}

/// Serializes a header stack. Every header but the last announces a nested
/// header; the last carries `inner_type`, which must not be `LOADER_ETHTYPE`.
pub fn encode_update(headers: &[UpdateHeader], inner_type: u16) -> BitString {
    let mut out = Vec::with_capacity(headers.len() * HEADER_BYTES);
    for (i, h) in headers.iter().enumerate() {
        let ty = if i + 1 == headers.len() {
            inner_type
        } else {
            LOADER_ETHTYPE
        };
        out.extend_from_slice(&h.src_sw_id.to_be_bytes());
        out.extend_from_slice(&h.dst_sw_id.to_be_bytes());
        out.extend_from_slice(&h.state_id.to_be_bytes());
        out.extend_from_slice(&h.replica_id.to_be_bytes());
        out.extend_from_slice(&h.state_value.to_be_bytes());
        out.extend_from_slice(&ty.to_be_bytes());
    }
    BitString::from_bytes(out)
}

/// Parses a header chain and returns it with the protocol type that ends it.
pub fn decode_update(bits: &BitString) -> Result<(Vec<UpdateHeader>, u16), WireError> {
    let mut headers = Vec::new();
    let mut offset = 0usize;
    loop {
        let available = bits.len_bits.saturating_sub(offset);
        if available < HEADER_BITS {
            return Err(WireError::TruncatedHeader { offset, available });
        }
        let b = &bits.bytes[offset / 8..offset / 8 + HEADER_BYTES];
        let u32_at = |i: usize| u32::from_be_bytes(b[i..i + 4].try_into().expect("4 bytes"));
        let h = UpdateHeader {
            src_sw_id: u32_at(0),
            dst_sw_id: u32_at(4),
            state_id: u32_at(8),
            replica_id: u32_at(12),
            state_value: u64::from_be_bytes(b[16..24].try_into().expect("8 bytes")),
            l3_protocol_type: u16::from_be_bytes([b[24], b[25]]),
        };
        offset += HEADER_BITS;
        let ty = h.l3_protocol_type;
        headers.push(h);
        if ty != LOADER_ETHTYPE {
            return Ok((headers, ty));
        }
    }
}

/// On-wire size of an update frame carrying `k` headers.
pub fn update_frame_bits(k: usize) -> u64 {
    (FRAME_OVERHEAD_BITS + (k * HEADER_BITS) as u64).max(MIN_FRAME_BITS)
}

/// Traffic-triggered emission state for one state at its writer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateTrigger {
    pub mode: TriggerMode,
    pub t_prime: Option<Nanos>,
    pub pkt_count: u64,
}

impl UpdateTrigger {
    pub fn new(mode: TriggerMode) -> UpdateTrigger {
        UpdateTrigger {
            mode,
            t_prime: None,
            pkt_count: 0,
        }
    }

    /// Registers one packet arrival; true when an update is due.
    pub fn on_packet(&mut self, t_clk: Nanos) -> bool {
        match self.mode {
            TriggerMode::TimePeriod(tau) => {
                let due = self.t_prime.is_none_or(|tp| t_clk >= tp + tau);
                if due {
                    self.t_prime = Some(t_clk);
                }
                due
            }
            TriggerMode::PacketPeriod(p) => {
                self.pkt_count += 1;
                if self.pkt_count >= p {
                    self.pkt_count = 0;
                    self.t_prime = Some(t_clk);
                    true
                } else {
                    false
                }
            }
        }
    }
}

/// Runs the trigger for one packet and, when due, builds the header
/// advertising the current local value of `state_id`.
pub fn maybe_trigger_update(
    trigger: &mut UpdateTrigger,
    t_clk: Nanos,
    state_id: StateId,
    store: &ReplicaStore,
    replica_id: u32,
) -> Option<UpdateHeader> {
    let local = store.local(state_id)?;
    trigger.on_packet(t_clk).then_some(UpdateHeader {
        src_sw_id: store.node,
        dst_sw_id: 0,
        state_id,
        replica_id,
        state_value: local.value,
        l3_protocol_type: IP_ETHTYPE,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocalKind {
    Counter,
    Rate(RateEstimatorWindow),
    Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSlot {
    pub value: u64,
    /// Writes performed so far (`|x|_t`).
    pub writes: u64,
    pub kind: LocalKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RemoteSlot {
    pub value: u64,
    /// Origin emission time of the held value.
    pub origin_ts: Nanos,
    /// Origin write count when the held value was emitted.
    pub origin_writes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyOutcome {
    /// Remote slot overwritten; carries the slot content it replaced.
    Applied {
        previous: Option<RemoteSlot>,
    },
    /// Older than or equal to what the slot already holds.
    Stale,
    UnknownState,
}

/// Per-switch replicated state: local slots for states written here, one
/// remote slot per `(state, origin)` and the cached reduced values.
#[derive(Debug, Clone)]
pub struct ReplicaStore {
    pub node: NodeId,
    program: Arc<PrimitiveProgram>,
    held: BTreeSet<StateId>,
    local: BTreeMap<StateId, LocalSlot>,
    remote: BTreeMap<(StateId, NodeId), RemoteSlot>,
    eval: ProgramEval,
}

impl ReplicaStore {
    /// `writes` lists the states this node writes; `held` every state it
    /// keeps a copy of (including the written ones).
    pub fn new(
        node: NodeId,
        program: Arc<PrimitiveProgram>,
        writes: &[StateId],
        held: &[StateId],
        estimator: (Nanos, u32),
    ) -> ReplicaStore {
        let mut local = BTreeMap::new();
        for &id in writes {
            let kind = match program.state(id).map(|s| s.value_kind) {
                Some(ValueKind::Counter) => LocalKind::Counter,
                Some(ValueKind::RateEstimate) => {
                    LocalKind::Rate(RateEstimatorWindow::new(estimator.0, estimator.1))
                }
                _ => LocalKind::Scalar,
            };
            local.insert(
                id,
                LocalSlot {
                    value: 0,
                    writes: 0,
                    kind,
                },
            );
        }
        let mut store = ReplicaStore {
            node,
            program,
            held: held.iter().chain(writes).copied().collect(),
            local,
            remote: BTreeMap::new(),
            eval: ProgramEval {
                reduced: Vec::new(),
                triggers: Vec::new(),
            },
        };
        store.recompute();
        store
    }

    pub fn holds(&self, state: StateId) -> bool {
        self.held.contains(&state)
    }

    pub fn writes(&self, state: StateId) -> bool {
        self.local.contains_key(&state)
    }

    pub fn local(&self, state: StateId) -> Option<&LocalSlot> {
        self.local.get(&state)
    }

    pub fn local_states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.local.keys().copied()
    }

    pub fn remote(&self, state: StateId, origin: NodeId) -> Option<&RemoteSlot> {
        self.remote.get(&(state, origin))
    }

    /// Records one packet sample (`amount` events or bits) on a local state.
    pub fn sample(&mut self, state: StateId, t: Nanos, amount: u64) {
        let Some(slot) = self.local.get_mut(&state) else {
            return;
        };
        slot.writes += 1;
        match &mut slot.kind {
            LocalKind::Counter => slot.value = slot.value.saturating_add(amount),
            LocalKind::Rate(est) => {
                est.update(t, amount);
                slot.value = est.read(t);
            }
            LocalKind::Scalar => slot.value = amount,
        }
        self.recompute();
    }

    /// Overwrites a local scalar (externally injected values).
    pub fn write_scalar(&mut self, state: StateId, value: u64) {
        if let Some(slot) = self.local.get_mut(&state) {
            slot.writes += 1;
            slot.value = value;
            self.recompute();
        }
    }

    /// Rolls rate estimators forward to `t` so idle windows decay.
    pub fn advance(&mut self, t: Nanos) {
        let mut changed = false;
        for slot in self.local.values_mut() {
            if let LocalKind::Rate(est) = &mut slot.kind {
                let v = est.read(t);
                if v != slot.value {
                    slot.value = v;
                    changed = true;
                }
            }
        }
        if changed {
            self.recompute();
        }
    }

    /// Last-writer-wins per origin on the origin emission timestamp.
    pub fn apply_update(
        &mut self,
        header: &UpdateHeader,
        origin_ts: Nanos,
        origin_writes: u64,
    ) -> ApplyOutcome {
        if !self.held.contains(&header.state_id) {
            return ApplyOutcome::UnknownState;
        }
        if header.src_sw_id == self.node {
            return ApplyOutcome::Stale;
        }
        let key = (header.state_id, header.src_sw_id);
        let previous = self.remote.get(&key).copied();
        if previous.is_some_and(|p| origin_ts <= p.origin_ts) {
            return ApplyOutcome::Stale;
        }
        self.remote.insert(
            key,
            RemoteSlot {
                value: header.state_value,
                origin_ts,
                origin_writes,
            },
        );
        self.recompute();
        ApplyOutcome::Applied { previous }
    }

    /// Value the reductions see for one state: the local slot if written
    /// here, otherwise the freshest remote copy, otherwise 0.
    pub fn value_of(&self, state: StateId) -> u64 {
        if let Some(l) = self.local.get(&state) {
            return l.value;
        }
        self.remote
            .range((state, 0)..=(state, NodeId::MAX))
            .max_by_key(|(_, slot)| slot.origin_ts)
            .map(|(_, slot)| slot.value)
            .unwrap_or(0)
    }

    fn recompute(&mut self) {
        let program = Arc::clone(&self.program);
        let eval = program.evaluate(|id, buf| buf.push(self.value_of(id)));
        self.eval = eval;
    }

    /// Cached reduced value by reduction output name.
    pub fn read_global(&self, output: &str) -> Option<u64> {
        let slot = self.program.reduced_slot(output)?;
        self.eval.reduced.get(slot as usize).copied()
    }

    pub fn reduced(&self) -> &[u64] {
        &self.eval.reduced
    }

    /// Trigger outcomes on the cached reduced values.
    pub fn trigger_outcomes(&self) -> &[(u32, TriggerEval)] {
        &self.eval.triggers
    }

    pub fn program(&self) -> &PrimitiveProgram {
        &self.program
    }
}

/// Tree ports a received update is copied to. `None` when the switch has no
/// replication entry for the state.
pub fn flood_on_tree(
    rules: &SwitchRules,
    state: StateId,
    ingress_port: Option<u32>,
) -> Option<Vec<u32>> {
    let ports = rules.replication.get(&state)?;
    Some(
        ports
            .iter()
            .copied()
            .filter(|&p| Some(p) != ingress_port)
            .collect(),
    )
}
