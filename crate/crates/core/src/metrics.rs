//! Metric collection, CSV export and run summaries.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use crate::compiler::StateId;
use crate::time::Nanos;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkInfo {
    pub a: String,
    pub b: String,
    pub capacity_bps: u64,
    /// Both ends are switches.
    pub core: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassBits {
    pub data: u64,
    pub replication: u64,
}

impl ClassBits {
    pub fn total(&self) -> u64 {
        self.data + self.replication
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detection {
    pub time: Nanos,
    pub node: String,
    pub trigger: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub time: Nanos,
    pub switch: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowInfo {
    pub name: String,
    pub src: String,
    pub dst: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StalenessSample {
    pub time: Nanos,
    pub node: String,
    pub state: StateId,
    /// Age of the replaced copy when its successor arrived.
    pub staleness: Nanos,
    /// One-way delay of the applied update.
    pub visibility: Nanos,
    /// Writes the replaced copy lagged behind the origin.
    pub lag_writes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub data_sent: u64,
    pub data_delivered: u64,
    pub data_dropped: u64,
    pub data_punted: u64,
    pub data_in_flight: u64,
    pub updates_emitted: u64,
    pub update_copies: u64,
    pub updates_applied: u64,
    pub updates_stale: u64,
    pub loop_violations: u64,
    pub events: u64,
}

/// Per-state replication parameters, copied into the log for reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateReport {
    pub state: StateId,
    pub name: String,
    pub writer: String,
    pub d_r: Nanos,
    pub worst_pair_delay: Nanos,
    pub mode: String,
    /// Period plus worst pair delay plus one inter-arrival at `r_min`.
    pub staleness_bound: Nanos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunInfo {
    pub scenario: String,
    pub app: String,
    pub replica_count: usize,
    pub replicas: Vec<String>,
    pub seed: u64,
    pub t_end: Nanos,
    pub bin: Nanos,
    pub r_min: f64,
    pub states: Vec<StateReport>,
    pub tree: Vec<(String, String)>,
    /// Replicated-state register bits per replica switch.
    pub memory_bits: Vec<(String, u64)>,
    pub centrality: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub info: RunInfo,
    pub links: Vec<LinkInfo>,
    /// `[link][bin]`, both directions combined.
    pub link_bins: Vec<Vec<ClassBits>>,
    pub detections: Vec<Detection>,
    pub notifications: Vec<Notification>,
    /// `(kind, location) -> count`.
    pub drops: BTreeMap<(String, String), u64>,
    pub flows: Vec<FlowInfo>,
    /// `[flow][bin]` offered bits.
    pub flow_offered: Vec<Vec<u64>>,
    /// `[flow][bin]` delivered bits.
    pub flow_delivered: Vec<Vec<u64>>,
    pub staleness: Vec<StalenessSample>,
    pub counters: Counters,
}

impl MetricsLog {
    pub fn new(info: RunInfo, links: Vec<LinkInfo>, flows: Vec<FlowInfo>) -> MetricsLog {
        let bins = info.t_end.0.div_ceil(info.bin.0.max(1)).max(1) as usize;
        MetricsLog {
            link_bins: vec![vec![ClassBits::default(); bins]; links.len()],
            flow_offered: vec![vec![0; bins]; flows.len()],
            flow_delivered: vec![vec![0; bins]; flows.len()],
            info,
            links,
            detections: Vec::new(),
            notifications: Vec::new(),
            drops: BTreeMap::new(),
            flows,
            staleness: Vec::new(),
            counters: Counters::default(),
        }
    }

    pub fn bins(&self) -> usize {
        self.link_bins
            .first()
            .map(Vec::len)
            .unwrap_or_else(|| self.flow_offered.first().map_or(0, Vec::len))
    }

    pub fn bin_of(&self, t: Nanos) -> usize {
        ((t.0 / self.info.bin.0.max(1)) as usize).min(self.bins().saturating_sub(1))
    }

    pub fn add_link_bits(&mut self, link: usize, t: Nanos, bits: u64, replication: bool) {
        let b = self.bin_of(t);
        let slot = &mut self.link_bins[link][b];
        if replication {
            slot.replication += bits;
        } else {
            slot.data += bits;
        }
    }

    pub fn count_drop(&mut self, kind: &str, location: &str) {
        *self
            .drops
            .entry((kind.to_string(), location.to_string()))
            .or_default() += 1;
    }

    pub fn total_drops(&self) -> u64 {
        self.drops.values().sum()
    }

    /// First bin inside the steady window (the last `fraction` of the run).
    pub fn steady_start_bin(&self, fraction: f64) -> usize {
        let bins = self.bins();
        let skip = ((bins as f64) * (1.0 - fraction.clamp(0.0, 1.0))).round() as usize;
        skip.min(bins.saturating_sub(1))
    }

    /// Detection times per node for one trigger, first rising edge only.
    pub fn first_detections(&self, trigger: &str) -> BTreeMap<String, Nanos> {
        let mut out = BTreeMap::new();
        for d in &self.detections {
            if d.trigger == trigger {
                out.entry(d.node.clone()).or_insert(d.time);
            }
        }
        out
    }

    /// Delivered throughput (bits/s) summed over all flows, per bin.
    pub fn aggregate_throughput(&self) -> Vec<f64> {
        let secs = self.info.bin.as_secs_f64();
        (0..self.bins())
            .map(|b| self.flow_delivered.iter().map(|f| f[b]).sum::<u64>() as f64 / secs)
            .collect()
    }

    pub fn flow_throughput(&self, flow: usize) -> Vec<f64> {
        let secs = self.info.bin.as_secs_f64();
        self.flow_delivered[flow]
            .iter()
            .map(|&b| b as f64 / secs)
            .collect()
    }

    pub fn max_staleness(&self) -> Option<Nanos> {
        self.staleness.iter().map(|s| s.staleness).max()
    }

    /// Writes every CSV family plus `plan.txt` into `dir`.
    pub fn write_csv(&self, dir: &Path, steady_fraction: f64) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let secs = self.info.bin.as_secs_f64();
        let mut w = csv::Writer::from_path(dir.join("links.csv"))?;
        w.write_record([
            "bin_start_s",
            "link",
            "a",
            "b",
            "core",
            "capacity_bps",
            "data_bits",
            "replication_bits",
            "total_bits",
            "data_util",
            "replication_util",
        ])?;
        for b in 0..self.bins() {
            for (i, l) in self.links.iter().enumerate() {
                let c = self.link_bins[i][b];
                let cap = 2.0 * l.capacity_bps as f64 * secs;
                w.write_record([
                    fmt_f(b as f64 * secs, 3),
                    i.to_string(),
                    l.a.clone(),
                    l.b.clone(),
                    l.core.to_string(),
                    l.capacity_bps.to_string(),
                    c.data.to_string(),
                    c.replication.to_string(),
                    c.total().to_string(),
                    fmt_f(c.data as f64 / cap, 6),
                    fmt_f(c.replication as f64 / cap, 6),
                ])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("detections.csv"))?;
        w.write_record(["time_ns", "node", "trigger"])?;
        for d in &self.detections {
            w.write_record([d.time.0.to_string(), d.node.clone(), d.trigger.clone()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("notifications.csv"))?;
        w.write_record(["time_ns", "switch", "message"])?;
        for n in &self.notifications {
            w.write_record([n.time.0.to_string(), n.switch.clone(), n.message.clone()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("drops.csv"))?;
        w.write_record(["kind", "location", "count"])?;
        for ((kind, loc), n) in &self.drops {
            w.write_record([kind.clone(), loc.clone(), n.to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("throughput.csv"))?;
        w.write_record([
            "bin_start_s",
            "flow",
            "src",
            "dst",
            "offered_bits",
            "delivered_bits",
            "delivered_bps",
        ])?;
        for b in 0..self.bins() {
            for (i, f) in self.flows.iter().enumerate() {
                w.write_record([
                    fmt_f(b as f64 * secs, 3),
                    f.name.clone(),
                    f.src.clone(),
                    f.dst.clone(),
                    self.flow_offered[i][b].to_string(),
                    self.flow_delivered[i][b].to_string(),
                    fmt_f(self.flow_delivered[i][b] as f64 / secs, 1),
                ])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("staleness.csv"))?;
        w.write_record([
            "time_ns",
            "node",
            "state",
            "staleness_ns",
            "visibility_ns",
            "lag_writes",
        ])?;
        for s in &self.staleness {
            w.write_record([
                s.time.0.to_string(),
                s.node.clone(),
                s.state.to_string(),
                s.staleness.0.to_string(),
                s.visibility.0.to_string(),
                s.lag_writes.to_string(),
            ])?;
        }
        w.flush()?;

        write_summary_csv(
            &dir.join("summary.csv"),
            &summarize(std::slice::from_ref(self), steady_fraction),
        )?;
        fs::write(dir.join("plan.txt"), self.plan_text())
    }

    /// Human-readable resolved plan for reproducibility audits.
    pub fn plan_text(&self) -> String {
        let i = &self.info;
        let mut s = String::new();
        s.push_str(&format!(
            "scenario {}\napp {}\nseed {}\n",
            i.scenario, i.app, i.seed
        ));
        s.push_str(&format!("t_end_ns {}\nbin_ns {}\n", i.t_end.0, i.bin.0));
        s.push_str(&format!(
            "replica_count {}\nreplicas {}\n",
            i.replica_count,
            i.replicas.join(",")
        ));
        s.push_str(&format!("r_min_pps {}\n", fmt_f(i.r_min, 3)));
        for (n, c) in &i.centrality {
            s.push_str(&format!("centrality {n} {}\n", fmt_f(*c, 6)));
        }
        for (a, b) in &i.tree {
            s.push_str(&format!("tree_edge {a} {b}\n"));
        }
        for st in &i.states {
            s.push_str(&format!(
                "state {} name={} writer={} d_r_ns={} worst_pair_delay_ns={} mode={} staleness_bound_ns={}\n",
                st.state, st.name, st.writer, st.d_r.0, st.worst_pair_delay.0, st.mode, st.staleness_bound.0
            ));
        }
        for (n, bits) in &i.memory_bits {
            s.push_str(&format!("memory_bits {n} {bits}\n"));
        }
        let c = &self.counters;
        s.push_str(&format!(
            "counters sent={} delivered={} dropped={} punted={} in_flight={} updates_emitted={} update_copies={} updates_applied={} updates_stale={} loop_violations={} events={}\n",
            c.data_sent,
            c.data_delivered,
            c.data_dropped,
            c.data_punted,
            c.data_in_flight,
            c.updates_emitted,
            c.update_copies,
            c.updates_applied,
            c.updates_stale,
            c.loop_violations,
            c.events
        ));
        s
    }
}

/// Fixed-precision float formatting so outputs are byte-stable.
pub fn fmt_f(v: f64, digits: usize) -> String {
    format!("{v:.digits$}")
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub scenario: String,
    pub app: String,
    pub replica_count: usize,
    pub replicas: String,
    pub steady_from_s: f64,
    pub data_bits: u64,
    pub replication_bits: u64,
    /// Mean over core links of data bits / (2 · capacity · window).
    pub mean_data_util: f64,
    pub mean_replication_util: f64,
    pub replication_fraction: f64,
    /// Mean data utilization of the C=1 run divided by this run's, when the
    /// batch contains a C=1 run.
    pub data_ratio_vs_single: Option<f64>,
    /// `node@seconds` of each node's first trigger rising edge.
    pub detections: String,
    pub detection_spread: Option<Nanos>,
    pub aggregate_throughput_bps: f64,
    pub min_flow_throughput_bps: f64,
    pub max_staleness: Option<Nanos>,
    pub staleness_bound: Option<Nanos>,
    pub max_lag_writes: u64,
    pub drops: u64,
}

/// Per-run summary over the steady window (last `steady_fraction` of bins).
pub fn summarize(logs: &[MetricsLog], steady_fraction: f64) -> Vec<Summary> {
    let mut rows: Vec<Summary> = logs
        .iter()
        .map(|l| summarize_one(l, steady_fraction))
        .collect();
    let single = rows
        .iter()
        .find(|r| r.replica_count == 1)
        .map(|r| r.mean_data_util);
    if let Some(base) = single {
        for r in &mut rows {
            if r.mean_data_util > 0.0 {
                r.data_ratio_vs_single = Some(base / r.mean_data_util);
            }
        }
    }
    rows
}

fn summarize_one(log: &MetricsLog, steady_fraction: f64) -> Summary {
    let start = log.steady_start_bin(steady_fraction);
    let bins = log.bins();
    let window_s = (bins - start) as f64 * log.info.bin.as_secs_f64();
    let mut data_bits = 0u64;
    let mut repl_bits = 0u64;
    let mut data_util = Vec::new();
    let mut repl_util = Vec::new();
    for (i, l) in log.links.iter().enumerate() {
        if !l.core {
            continue;
        }
        let (d, r) = log.link_bins[i][start..]
            .iter()
            .fold((0u64, 0u64), |(d, r), c| (d + c.data, r + c.replication));
        data_bits += d;
        repl_bits += r;
        let cap = 2.0 * l.capacity_bps as f64 * window_s;
        data_util.push(d as f64 / cap);
        repl_util.push(r as f64 / cap);
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let total = data_bits + repl_bits;

    let mut first: BTreeMap<String, Nanos> = BTreeMap::new();
    for d in &log.detections {
        first.entry(d.node.clone()).or_insert(d.time);
    }
    let detections = first
        .iter()
        .map(|(n, t)| format!("{n}@{}", fmt_f(t.as_secs_f64(), 6)))
        .collect::<Vec<_>>()
        .join(";");
    let detection_spread = if first.len() >= 2 {
        let lo = first.values().min().copied().expect("non-empty");
        let hi = first.values().max().copied().expect("non-empty");
        Some(hi - lo)
    } else {
        None
    };

    let agg = log.aggregate_throughput();
    let aggregate = mean(&agg[start..]);
    let min_flow = (0..log.flows.len())
        .map(|f| mean(&log.flow_throughput(f)[start..]))
        .fold(f64::INFINITY, f64::min);

    Summary {
        scenario: log.info.scenario.clone(),
        app: log.info.app.clone(),
        replica_count: log.info.replica_count,
        replicas: log.info.replicas.join(" "),
        steady_from_s: start as f64 * log.info.bin.as_secs_f64(),
        data_bits,
        replication_bits: repl_bits,
        mean_data_util: mean(&data_util),
        mean_replication_util: mean(&repl_util),
        replication_fraction: if total == 0 {
            0.0
        } else {
            repl_bits as f64 / total as f64
        },
        data_ratio_vs_single: None,
        detections,
        detection_spread,
        aggregate_throughput_bps: aggregate,
        min_flow_throughput_bps: if min_flow.is_finite() { min_flow } else { 0.0 },
        max_staleness: log.max_staleness(),
        staleness_bound: log.info.states.iter().map(|s| s.staleness_bound).max(),
        max_lag_writes: log
            .staleness
            .iter()
            .map(|s| s.lag_writes)
            .max()
            .unwrap_or(0),
        drops: log.total_drops(),
    }
}

pub const SUMMARY_HEADER: [&str; 18] = [
    "scenario",
    "app",
    "replica_count",
    "replicas",
    "steady_from_s",
    "data_bits",
    "replication_bits",
    "mean_data_util",
    "mean_replication_util",
    "replication_fraction",
    "data_ratio_vs_single",
    "detections",
    "detection_spread_ns",
    "aggregate_throughput_bps",
    "min_flow_throughput_bps",
    "max_staleness_ns",
    "staleness_bound_ns",
    "max_lag_writes",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn summary_record(s: &Summary) -> Vec<String> {
    vec![
        s.scenario.clone(),
        s.app.clone(),
        s.replica_count.to_string(),
        s.replicas.clone(),
        fmt_f(s.steady_from_s, 3),
        s.data_bits.to_string(),
        s.replication_bits.to_string(),
        fmt_f(s.mean_data_util, 6),
        fmt_f(s.mean_replication_util, 6),
        fmt_f(s.replication_fraction, 6),
        s.data_ratio_vs_single
            .map(|r| fmt_f(r, 4))
            .unwrap_or_default(),
        s.detections.clone(),
        opt(s.detection_spread.map(|d| d.0)),
        fmt_f(s.aggregate_throughput_bps, 1),
        fmt_f(s.min_flow_throughput_bps, 1),
        opt(s.max_staleness.map(|d| d.0)),
        opt(s.staleness_bound.map(|d| d.0)),
        s.max_lag_writes.to_string(),
    ]
}

pub fn write_summary_csv(path: &Path, rows: &[Summary]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record(summary_record(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the `summary.csv` files of earlier runs.
pub fn read_summary_csv(path: &Path) -> io::Result<Vec<BTreeMap<String, String>>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(
            headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect(),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log() -> MetricsLog {
        let info = RunInfo {
            scenario: "t".into(),
            app: "ddos".into(),
            replica_count: 1,
            replicas: vec!["SW1".into()],
            seed: 1,
            t_end: Nanos::from_secs(4),
            bin: Nanos::from_secs(1),
            r_min: 1.0,
            states: vec![],
            tree: vec![],
            memory_bits: vec![],
            centrality: vec![],
        };
        let links = vec![LinkInfo {
            a: "A".into(),
            b: "B".into(),
            capacity_bps: 1000,
            core: true,
        }];
        MetricsLog::new(info, links, vec![])
    }

    #[test]
    fn steady_window_is_last_half() {
        let mut l = log();
        assert_eq!(l.bins(), 4);
        assert_eq!(l.steady_start_bin(0.5), 2);
        l.add_link_bits(0, Nanos::from_millis(500), 1000, false);
        l.add_link_bits(0, Nanos::from_millis(2500), 1000, false);
        l.add_link_bits(0, Nanos::from_millis(3500), 1000, true);
        let s = &summarize(&[l], 0.5)[0];
        assert_eq!(s.data_bits, 1000);
        assert_eq!(s.replication_bits, 1000);
        assert_eq!(s.replication_fraction, 0.5);
        assert_eq!(s.mean_data_util, 0.25);
    }

    #[test]
    fn single_replica_has_no_replication() {
        let mut l = log();
        l.add_link_bits(0, Nanos::from_secs(3), 800, false);
        let s = &summarize(&[l], 0.5)[0];
        assert_eq!(s.replication_fraction, 0.0);
        assert_eq!(s.data_ratio_vs_single, Some(1.0));
    }
}
