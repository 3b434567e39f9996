//! Network graph: switches, hosts, links, port classes and shortest paths.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::app_model::PortClass;
use crate::time::Nanos;

/// Dense node index. Lower ids win every tie.
pub type NodeId = u32;
pub type LinkId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Switch,
    Host,
    Controller,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    /// Hosts only: traffic from this host enters the monitored domain.
    pub external: bool,
    /// Switches only: fabric tier (leaf 0, spine 1, ...). Ports towards a
    /// higher tier are uplinks, towards a lower tier downlinks.
    pub tier: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub id: LinkId,
    pub a: NodeId,
    pub b: NodeId,
    pub delay: Nanos,
    pub capacity_bps: u64,
}

impl Link {
    pub fn other(&self, n: NodeId) -> NodeId {
        if n == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// One port of a node; ports are numbered by ascending peer id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Port {
    pub index: u32,
    pub link: LinkId,
    pub peer: NodeId,
    pub class: PortClass,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("link {0}-{1} declared twice")]
    DuplicateLink(String, String),
    #[error("link {0}-{1} must have positive delay and capacity")]
    BadLink(String, String),
    #[error("link {0} loops back on itself")]
    SelfLoop(String),
    #[error("switches are not connected")]
    DisconnectedTopology,
    #[error("host {0} must attach to exactly one switch")]
    HostAttachment(String),
}

#[derive(Debug, Clone, Default)]
pub struct TopologyBuilder {
    nodes: Vec<Node>,
    links: Vec<(String, String, Nanos, u64)>,
}

impl TopologyBuilder {
    pub fn new() -> TopologyBuilder {
        TopologyBuilder::default()
    }

    fn push(&mut self, name: &str, kind: NodeKind, external: bool, tier: Option<u32>) -> &mut Self {
        self.nodes.push(Node {
            id: self.nodes.len() as NodeId,
            name: name.to_string(),
            kind,
            external,
            tier,
        });
        self
    }

    pub fn switch(&mut self, name: &str) -> &mut Self {
        self.push(name, NodeKind::Switch, false, None)
    }

    pub fn tiered_switch(&mut self, name: &str, tier: u32) -> &mut Self {
        self.push(name, NodeKind::Switch, false, Some(tier))
    }

    pub fn host(&mut self, name: &str, external: bool) -> &mut Self {
        self.push(name, NodeKind::Host, external, None)
    }

    pub fn link(&mut self, a: &str, b: &str, delay: Nanos, capacity_bps: u64) -> &mut Self {
        self.links
            .push((a.to_string(), b.to_string(), delay, capacity_bps));
        self
    }

    pub fn build(&self) -> Result<Topology, TopologyError> {
        let mut by_name = BTreeMap::new();
        for n in &self.nodes {
            if by_name.insert(n.name.clone(), n.id).is_some() {
                return Err(TopologyError::DuplicateNode(n.name.clone()));
            }
        }
        let mut links = Vec::new();
        let mut seen = BTreeSet::new();
        for (a, b, delay, cap) in &self.links {
            let ia = *by_name
                .get(a)
                .ok_or_else(|| TopologyError::UnknownNode(a.clone()))?;
            let ib = *by_name
                .get(b)
                .ok_or_else(|| TopologyError::UnknownNode(b.clone()))?;
            if ia == ib {
                return Err(TopologyError::SelfLoop(a.clone()));
            }
            if !seen.insert((ia.min(ib), ia.max(ib))) {
                return Err(TopologyError::DuplicateLink(a.clone(), b.clone()));
            }
            if *delay == Nanos::ZERO || *cap == 0 {
                return Err(TopologyError::BadLink(a.clone(), b.clone()));
            }
            links.push(Link {
                id: links.len() as LinkId,
                a: ia,
                b: ib,
                delay: *delay,
                capacity_bps: *cap,
            });
        }
        let mut topo = Topology {
            nodes: self.nodes.clone(),
            links,
            ports: vec![Vec::new(); self.nodes.len()],
            by_name,
            dist: Vec::new(),
        };
        topo.index_ports();
        for n in &topo.nodes {
            if n.kind == NodeKind::Host {
                let sw = topo.ports[n.id as usize]
                    .iter()
                    .filter(|p| topo.nodes[p.peer as usize].kind == NodeKind::Switch)
                    .count();
                if sw != 1 || topo.ports[n.id as usize].len() != 1 {
                    return Err(TopologyError::HostAttachment(n.name.clone()));
                }
            }
        }
        topo.dist = topo.all_pairs();
        let switches = topo.switches();
        if let Some(&first) = switches.first() {
            if switches
                .iter()
                .any(|&s| topo.dist[first as usize][s as usize] == u64::MAX)
            {
                return Err(TopologyError::DisconnectedTopology);
            }
        }
        Ok(topo)
    }
}

/// Immutable network graph with precomputed switch-to-switch distances.
#[derive(Debug, Clone)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub ports: Vec<Vec<Port>>,
    by_name: BTreeMap<String, NodeId>,
    /// Shortest delay in ns over switch-only paths (`u64::MAX` if none).
    dist: Vec<Vec<u64>>,
}

impl Topology {
    fn index_ports(&mut self) {
        for l in &self.links {
            for (me, peer) in [(l.a, l.b), (l.b, l.a)] {
                let class = self.classify(me, peer);
                self.ports[me as usize].push(Port {
                    index: 0,
                    link: l.id,
                    peer,
                    class,
                });
            }
        }
        for ports in &mut self.ports {
            ports.sort_by_key(|p| p.peer);
            for (i, p) in ports.iter_mut().enumerate() {
                p.index = i as u32;
            }
        }
    }

    fn classify(&self, me: NodeId, peer: NodeId) -> PortClass {
        let (m, p) = (&self.nodes[me as usize], &self.nodes[peer as usize]);
        match (m.kind, p.kind) {
            (NodeKind::Switch, NodeKind::Host) if p.external => PortClass::External,
            (NodeKind::Switch, NodeKind::Host) => PortClass::Downlink,
            (NodeKind::Switch, NodeKind::Switch) => match (m.tier, p.tier) {
                (Some(a), Some(b)) if b > a => PortClass::Uplink,
                (Some(a), Some(b)) if b < a => PortClass::Downlink,
                _ => PortClass::Any,
            },
            _ => PortClass::Any,
        }
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn id(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id as usize].name
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id as usize]
    }

    pub fn switches(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Switch)
            .map(|n| n.id)
            .collect()
    }

    pub fn hosts(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Host)
            .map(|n| n.id)
            .collect()
    }

    pub fn is_switch(&self, id: NodeId) -> bool {
        self.nodes[id as usize].kind == NodeKind::Switch
    }

    /// Switch a host hangs off.
    pub fn attachment(&self, host: NodeId) -> NodeId {
        self.ports[host as usize][0].peer
    }

    pub fn port_to(&self, node: NodeId, peer: NodeId) -> Option<&Port> {
        self.ports[node as usize].iter().find(|p| p.peer == peer)
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<&Link> {
        self.port_to(a, b).map(|p| &self.links[p.link as usize])
    }

    /// Links whose both ends are switches.
    pub fn core_links(&self) -> Vec<LinkId> {
        self.links
            .iter()
            .filter(|l| self.is_switch(l.a) && self.is_switch(l.b))
            .map(|l| l.id)
            .collect()
    }

    /// Switch neighbours of a switch, ascending id.
    pub fn switch_neighbors(&self, n: NodeId) -> impl Iterator<Item = (NodeId, u64)> + '_ {
        self.ports[n as usize]
            .iter()
            .filter(|p| self.is_switch(p.peer))
            .map(|p| (p.peer, self.links[p.link as usize].delay.0))
    }

    /// Shortest switch-to-switch delay in ns.
    pub fn distance(&self, a: NodeId, b: NodeId) -> u64 {
        self.dist[a as usize][b as usize]
    }

    fn all_pairs(&self) -> Vec<Vec<u64>> {
        let n = self.nodes.len();
        let mut out = vec![vec![u64::MAX; n]; n];
        for s in self.switches() {
            let row = &mut out[s as usize];
            row[s as usize] = 0;
            let mut heap = BinaryHeap::new();
            heap.push(Reverse((0u64, s)));
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > row[u as usize] {
                    continue;
                }
                for (v, w) in self.switch_neighbors(u) {
                    let nd = d + w;
                    if nd < row[v as usize] {
                        row[v as usize] = nd;
                        heap.push(Reverse((nd, v)));
                    }
                }
            }
        }
        out
    }

    /// Next switch on the shortest path from switch `from` to switch `to`;
    /// among equal-cost neighbours the lowest id wins.
    pub fn next_hop(&self, from: NodeId, to: NodeId) -> Option<NodeId> {
        if from == to {
            return None;
        }
        let target = self.distance(from, to);
        if target == u64::MAX {
            return None;
        }
        self.switch_neighbors(from)
            .find(|&(v, w)| self.distance(v, to) != u64::MAX && w + self.distance(v, to) == target)
            .map(|(v, _)| v)
    }

    /// Node sequence of the canonical shortest path between two switches.
    pub fn path(&self, from: NodeId, to: NodeId) -> Vec<NodeId> {
        let mut path = vec![from];
        let mut cur = from;
        while let Some(next) = self.next_hop(cur, to) {
            path.push(next);
            cur = next;
        }
        path
    }

    /// Sum of link delays along a node path.
    pub fn path_delay(&self, path: &[NodeId]) -> Nanos {
        Nanos(
            path.windows(2)
                .map(|w| self.link_between(w[0], w[1]).expect("path edge").delay.0)
                .sum(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring() -> Topology {
        let mut b = TopologyBuilder::new();
        for s in ["SW1", "SW2", "SW3", "SW4"] {
            b.switch(s);
        }
        let d = Nanos::from_micros(200);
        b.link("SW1", "SW2", d, 10_000_000)
            .link("SW2", "SW3", d, 10_000_000)
            .link("SW3", "SW4", d, 10_000_000)
            .link("SW4", "SW1", d, 10_000_000);
        b.host("AS1", true).link("AS1", "SW1", d, 100_000_000);
        b.build().unwrap()
    }

    #[test]
    fn ring_paths_prefer_lowest_id() {
        let t = ring();
        assert_eq!(t.distance(0, 2), 400_000);
        assert_eq!(t.path(0, 2), vec![0, 1, 2]);
        assert_eq!(t.path(1, 3), vec![1, 0, 3]);
        assert_eq!(t.core_links().len(), 4);
    }

    #[test]
    fn port_classes() {
        let t = ring();
        let as1 = t.id("AS1").unwrap();
        assert_eq!(t.port_to(0, as1).unwrap().class, PortClass::External);
        assert_eq!(t.port_to(0, 1).unwrap().class, PortClass::Any);
        assert_eq!(t.attachment(as1), 0);
        let idx: Vec<u32> = t.ports[0].iter().map(|p| p.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn disconnected_switches_rejected() {
        let mut b = TopologyBuilder::new();
        b.switch("A").switch("B");
        assert_eq!(b.build().unwrap_err(), TopologyError::DisconnectedTopology);
    }

    #[test]
    fn host_must_attach() {
        let mut b = TopologyBuilder::new();
        b.switch("A").host("h", false);
        assert!(matches!(b.build(), Err(TopologyError::HostAttachment(_))));
    }
}
