//! Strategies, brute-force oracles and property checks shared by the test targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use loader_core::app_model::{build_dag, InconsistencySpec, ReductionPrimitive};
use loader_core::apps::make_link_lb_app;
use loader_core::compiler::{assign_state_ids, compile, Capabilities, IdRegistry};
use loader_core::embedding::{
    solve_replication_period, steiner_tree, weighted_betweenness, EmbeddingError, TriggerMode,
    TriggerModeKind,
};
use loader_core::experiment::Experiment;
use loader_core::replication::{
    decode_update, encode_update, BitString, UpdateHeader, HEADER_BITS, IP_ETHTYPE, LOADER_ETHTYPE,
};
use loader_core::scenario::parse_scenario;
use loader_core::topology::{NodeId, Topology, TopologyBuilder};
use loader_core::Nanos;
use proptest::prelude::*;

pub const SCENARIOS: [&str; 4] = [
    "fig7_ddos_c2.scn",
    "fig8_ratelimit.scn",
    "linklb.scn",
    "resourcelb.scn",
];

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn load_scenario(name: &str) -> Experiment {
    parse_scenario(&std::fs::read_to_string(scenario_path(name)).unwrap()).unwrap()
}

pub fn header(src: u32, dst: u32, state: u32, replica: u32, value: u64) -> UpdateHeader {
    UpdateHeader {
        src_sw_id: src,
        dst_sw_id: dst,
        state_id: state,
        replica_id: replica,
        state_value: value,
        l3_protocol_type: 0,
    }
}

/// Encoded stacks with their expected hex.
pub fn golden_vectors() -> [(BitString, &'static str); 2] {
    [
        (
            encode_update(&[header(1, 2, 3, 0, 0x1122_3344_5566_7788)], IP_ETHTYPE),
            "0000000100000002000000030000000011223344556677880800",
        ),
        (
            encode_update(
                &[header(7, 0, 1, 2, 42), header(9, 0, 4, 1, u64::MAX)],
                IP_ETHTYPE,
            ),
            concat!(
                "00000007",
                "00000000",
                "00000001",
                "00000002",
                "000000000000002a",
                "88b5",
                "00000009",
                "00000000",
                "00000004",
                "00000001",
                "ffffffffffffffff",
                "0800",
            ),
        ),
    ]
}

pub fn arb_header() -> impl Strategy<Value = UpdateHeader> {
    (
        any::<u32>(),
        any::<u32>(),
        any::<u32>(),
        any::<u32>(),
        any::<u64>(),
    )
        .prop_map(|(s, d, st, r, v)| header(s, d, st, r, v))
}

pub fn arb_inner() -> impl Strategy<Value = u16> {
    any::<u16>().prop_filter("inner type must end the chain", |t| *t != LOADER_ETHTYPE)
}

pub fn arb_stack() -> impl Strategy<Value = (Vec<UpdateHeader>, u16)> {
    (prop::collection::vec(arb_header(), 1..8), arb_inner())
}

pub fn check_round_trip(headers: &[UpdateHeader], inner: u16) -> Result<(), TestCaseError> {
    let bits = encode_update(headers, inner);
    prop_assert_eq!(bits.len_bits(), HEADER_BITS * headers.len());
    let (decoded, ty) = decode_update(&bits).unwrap();
    prop_assert_eq!(ty, inner);
    prop_assert_eq!(decoded.len(), headers.len());
    for (i, (d, h)) in decoded.iter().zip(headers).enumerate() {
        let expected_ty = if i + 1 == headers.len() {
            inner
        } else {
            LOADER_ETHTYPE
        };
        prop_assert_eq!(d.l3_protocol_type, expected_ty);
        prop_assert_eq!(
            (
                d.src_sw_id,
                d.dst_sw_id,
                d.state_id,
                d.replica_id,
                d.state_value
            ),
            (
                h.src_sw_id,
                h.dst_sw_id,
                h.state_id,
                h.replica_id,
                h.state_value
            )
        );
    }
    Ok(())
}

pub fn arb_spec() -> impl Strategy<Value = InconsistencySpec> {
    prop_oneof![
        (1u64..50_000_000).prop_map(|ns| InconsistencySpec::TimeObsolescence {
            epsilon_t: Nanos(ns)
        }),
        (1u64..100, 1.0f64..1e6).prop_map(|(epsilon_r, max_write_rate)| {
            InconsistencySpec::UpdateError {
                epsilon_r,
                max_write_rate,
            }
        }),
    ]
}

pub fn arb_kind() -> impl Strategy<Value = TriggerModeKind> {
    prop_oneof![Just(TriggerModeKind::Time), Just(TriggerModeKind::Packet)]
}

pub fn arb_period_case() -> impl Strategy<Value = (InconsistencySpec, Nanos, f64, TriggerModeKind)>
{
    (
        arb_spec(),
        (0u64..5_000_000).prop_map(Nanos),
        10.0f64..1e6,
        arb_kind(),
    )
}

pub fn check_period(
    spec: InconsistencySpec,
    wpd: Nanos,
    r_min: f64,
    kind: TriggerModeKind,
) -> Result<(), TestCaseError> {
    match solve_replication_period(spec, wpd, r_min, kind) {
        Ok(Some(sol)) => {
            let d = sol.d_r.0 as f64;
            match spec {
                InconsistencySpec::TimeObsolescence { epsilon_t } => {
                    prop_assert!(sol.d_r + wpd <= epsilon_t);
                }
                InconsistencySpec::UpdateError {
                    epsilon_r,
                    max_write_rate,
                } => {
                    // Writes accumulated over the whole staleness window stay within budget.
                    prop_assert!(
                        (d + wpd.0 as f64) * 1e-9 * max_write_rate <= epsilon_r as f64 + 1e-9
                    );
                }
                InconsistencySpec::None => unreachable!(),
            }
            match sol.mode {
                TriggerMode::TimePeriod(tau) => {
                    prop_assert_eq!(kind, TriggerModeKind::Time);
                    prop_assert!(tau.0 as f64 + 1e9 / r_min <= d + 1.0);
                }
                TriggerMode::PacketPeriod(p) => {
                    prop_assert_eq!(kind, TriggerModeKind::Packet);
                    prop_assert!(p >= 1);
                    prop_assert!(p as f64 / r_min * 1e9 <= d + 1.0);
                    // Largest admissible p.
                    prop_assert!((p + 1) as f64 / r_min * 1e9 > d);
                }
            }
        }
        Ok(None) => prop_assert!(false, "replicable budget returned no plan"),
        Err(EmbeddingError::InfeasibleBudget(_)) => {
            let budget = match spec {
                InconsistencySpec::TimeObsolescence { epsilon_t } => epsilon_t.0 as f64,
                InconsistencySpec::UpdateError {
                    epsilon_r,
                    max_write_rate,
                } => (epsilon_r as f64 * 1e9 / max_write_rate).floor(),
                InconsistencySpec::None => unreachable!(),
            };
            // Infeasible only when not even one inter-arrival fits.
            prop_assert!(budget - (wpd.0 as f64) < (1e9 / r_min).ceil() + 1.0);
        }
        Err(e) => prop_assert!(false, "unexpected error {e}"),
    }
    Ok(())
}

/// `n` switches, a random spanning tree plus extra edges, delays in µs.
#[derive(Debug, Clone)]
pub struct Graph {
    pub n: usize,
    pub edges: BTreeMap<(usize, usize), u64>,
}

impl Graph {
    pub fn topology(&self) -> Topology {
        let mut b = TopologyBuilder::new();
        for i in 0..self.n {
            b.switch(&format!("S{i}"));
        }
        for (&(a, c), &d) in &self.edges {
            b.link(
                &format!("S{a}"),
                &format!("S{c}"),
                Nanos::from_micros(d),
                1_000_000_000,
            );
        }
        b.build().unwrap()
    }

    pub fn adj(&self) -> Vec<Vec<(usize, u64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for (&(a, b), &d) in &self.edges {
            adj[a].push((b, d * 1000));
            adj[b].push((a, d * 1000));
        }
        adj
    }
}

pub fn arb_graph(max_n: usize) -> impl Strategy<Value = Graph> {
    (3..=max_n).prop_flat_map(|n| {
        let parents = (1..n).map(|i| 0..i).collect::<Vec<_>>();
        let extra = prop::collection::vec((0..n, 0..n, 1u64..20), 0..n);
        let delays = prop::collection::vec(1u64..20, n - 1);
        (Just(n), parents, delays, extra).prop_map(|(n, parents, delays, extra)| {
            let mut edges = BTreeMap::new();
            for (i, (p, d)) in parents.into_iter().zip(delays).enumerate() {
                edges.insert((p, i + 1), d);
            }
            for (a, b, d) in extra {
                if a != b {
                    edges.entry((a.min(b), a.max(b))).or_insert(d);
                }
            }
            Graph { n, edges }
        })
    })
}

/// Minimum spanning tree cost of the subgraph induced by `nodes`, if connected.
pub fn induced_mst(g: &Graph, nodes: &BTreeSet<usize>) -> Option<u64> {
    let adj = g.adj();
    let start = *nodes.iter().next()?;
    let mut seen = BTreeSet::from([start]);
    let mut cost = 0;
    while seen.len() < nodes.len() {
        let best = seen
            .iter()
            .flat_map(|&u| adj[u].iter().map(move |&(v, d)| (d, u, v)))
            .filter(|&(_, _, v)| nodes.contains(&v) && !seen.contains(&v))
            .min()?;
        cost += best.0;
        seen.insert(best.2);
    }
    Some(cost)
}

/// Optimal Steiner cost: the best MST over terminals plus any Steiner subset.
pub fn brute_steiner(g: &Graph, terminals: &BTreeSet<usize>) -> u64 {
    let others: Vec<usize> = (0..g.n).filter(|v| !terminals.contains(v)).collect();
    (0u32..1 << others.len())
        .filter_map(|mask| {
            let mut nodes = terminals.clone();
            for (i, &v) in others.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    nodes.insert(v);
                }
            }
            induced_mst(g, &nodes)
        })
        .min()
        .expect("graph is connected")
}

pub fn simple_paths(adj: &[Vec<(usize, u64)>], s: usize, t: usize) -> Vec<(u64, Vec<usize>)> {
    fn go(
        adj: &[Vec<(usize, u64)>],
        t: usize,
        path: &mut Vec<usize>,
        cost: u64,
        out: &mut Vec<(u64, Vec<usize>)>,
    ) {
        let u = *path.last().unwrap();
        if u == t {
            out.push((cost, path.clone()));
            return;
        }
        for &(v, d) in &adj[u] {
            if !path.contains(&v) {
                path.push(v);
                go(adj, t, path, cost + d, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(adj, t, &mut vec![s], 0, &mut out);
    out
}

pub fn brute_betweenness(g: &Graph, w: &[f64]) -> Vec<f64> {
    let adj = g.adj();
    let mut c = vec![0.0; g.n];
    for s in 0..g.n {
        for t in 0..g.n {
            if s == t || w[s] * w[t] == 0.0 {
                continue;
            }
            let paths = simple_paths(&adj, s, t);
            let best = paths.iter().map(|p| p.0).min().unwrap();
            let shortest: Vec<_> = paths.iter().filter(|p| p.0 == best).collect();
            let share = w[s] * w[t] / shortest.len() as f64;
            for (_, p) in shortest {
                for &v in p {
                    c[v] += share;
                }
            }
        }
    }
    c
}

pub fn argmin_of_max(loads: &[u64]) -> u64 {
    let p = loads.len() / 2;
    let mut best = 0;
    for i in 1..p {
        if loads[i].max(loads[p + i]) < loads[best].max(loads[p + best]) {
            best = i;
        }
    }
    best as u64
}

pub fn arb_steiner_case() -> impl Strategy<Value = (Graph, BTreeSet<usize>)> {
    (arb_graph(8), prop::collection::btree_set(0usize..8, 2..6))
}

pub fn check_steiner(g: &Graph, picks: &BTreeSet<usize>) -> Result<(), TestCaseError> {
    let terminals: BTreeSet<usize> = picks.iter().copied().filter(|&v| v < g.n).collect();
    if terminals.len() < 2 {
        return Ok(());
    }
    let topo = g.topology();
    let ids: BTreeSet<NodeId> = terminals.iter().map(|&v| v as NodeId).collect();
    let tree = steiner_tree(&topo, &ids).unwrap();
    prop_assert!(tree.is_tree());
    prop_assert!(ids.is_subset(&tree.nodes()));
    let opt = brute_steiner(g, &terminals);
    prop_assert!(tree.cost(&topo) >= opt);
    prop_assert!(
        tree.cost(&topo) <= 2 * opt,
        "cost {} vs optimum {}",
        tree.cost(&topo),
        opt
    );
    Ok(())
}

pub fn arb_betweenness_case() -> impl Strategy<Value = (Graph, Vec<u32>)> {
    (arb_graph(6), prop::collection::vec(0u32..4, 6))
}

pub fn check_betweenness(g: &Graph, raw: &[u32]) -> Result<(), TestCaseError> {
    let w: Vec<f64> = raw[..g.n].iter().map(|&x| x as f64 * 0.5).collect();
    let weights: BTreeMap<NodeId, f64> = w
        .iter()
        .enumerate()
        .map(|(i, &x)| (i as NodeId, x))
        .collect();
    let got = weighted_betweenness(&g.topology(), &weights).unwrap();
    let want = brute_betweenness(g, &w);
    for (i, &x) in want.iter().enumerate() {
        let v = got[&(i as NodeId)];
        prop_assert!(
            (v - x).abs() <= 1e-9 * x.max(1.0),
            "node {}: {} vs {}",
            i,
            v,
            x
        );
    }
    Ok(())
}

pub fn arb_loads() -> impl Strategy<Value = Vec<u64>> {
    (1usize..8, prop::collection::vec(0u64..50, 16)).prop_map(|(p, seed)| seed[..2 * p].to_vec())
}

pub fn check_link_lb(loads: &[u64]) -> Result<(), TestCaseError> {
    prop_assert_eq!(
        ReductionPrimitive::MinMaxArgMin.apply(loads),
        argmin_of_max(loads)
    );
    let dag = build_dag(&make_link_lb_app(loads.len() / 2, 10, 1000.0)).unwrap();
    let program = assign_state_ids(
        compile(&dag, &Capabilities::all(), 8).unwrap(),
        &mut IdRegistry::new(),
    )
    .unwrap();
    let eval = program.evaluate(|id, buf| {
        let idx = program.states.iter().position(|s| s.id == id).unwrap();
        buf.push(loads[idx]);
    });
    let slot = program.reduced_slot("best_spine").unwrap();
    prop_assert_eq!(eval.reduced[slot as usize], argmin_of_max(loads));
    Ok(())
}
