//! Acceptance suite: one pass/fail line per criterion, non-zero exit on any failure.

mod common;

use std::fmt::Display;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use loader_core::experiment::run_experiment;
use loader_core::metrics::{summarize, MetricsLog, Summary};
use loader_core::replication::{update_frame_bits, HEADER_BITS};
use loader_core::sim::SimOutput;
use loader_core::Nanos;
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

const STEADY: f64 = 0.5;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: u32, name: &str, ok: bool, detail: impl Display) {
        if !ok {
            self.failed += 1;
        }
        println!(
            "criterion {n} {name}: {} ({detail})",
            if ok { "PASS" } else { "FAIL" }
        );
    }
}

fn property<S: Strategy>(
    cases: u32,
    strategy: S,
    check: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, check).map_err(|e| e.to_string())
}

fn in_range(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn ms(n: Nanos) -> String {
    format!("{:.3}ms", n.0 as f64 / 1e6)
}

/// Largest gap between packets handled at `node` within `[from, to]`.
fn max_arrival_gap(out: &SimOutput, node: &str, from: u64, to: u64) -> Option<u64> {
    let times: Vec<u64> = out
        .trace
        .iter()
        .filter_map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[1] == "fwd" && f[2] == node).then(|| f[0].parse().unwrap())
        })
        .filter(|&t| t >= from && t <= to)
        .collect();
    times.windows(2).map(|w| w[1] - w[0]).max()
}

fn detection(r: &mut Report) {
    let mut exp = load_scenario("fig7_ddos_c2.scn");
    exp.sim.trace = true;
    let start = Instant::now();
    let out = exp.run(2).unwrap();
    let wall = start.elapsed();
    let det = out.log.first_detections("ddos_detect");
    let (Some(&a), Some(&b)) = (det.get("SW1"), det.get("SW3")) else {
        r.line(
            1,
            "coherent detection",
            false,
            format!("detections {det:?}"),
        );
        return;
    };
    let spread = a.0.abs_diff(b.0);
    let (lo, hi) = (a.0.min(b.0), a.0.max(b.0));
    let states = &out.log.info.states;
    let prop = states
        .iter()
        .map(|s| s.d_r.0 + s.worst_pair_delay.0)
        .max()
        .unwrap();
    let gap = ["SW1", "SW3"]
        .iter()
        .filter_map(|n| max_arrival_gap(&out, n, lo.saturating_sub(prop), hi))
        .max()
        .unwrap_or(0);
    let bound = prop + gap;
    r.line(
        1,
        "coherent detection",
        spread <= bound && wall.as_secs_f64() < 10.0,
        format!(
            "SW1 {} SW3 {} spread {} bound {} wall {:.2}s",
            ms(a),
            ms(b),
            ms(Nanos(spread)),
            ms(Nanos(bound)),
            wall.as_secs_f64()
        ),
    );
}

fn sweep_criteria(r: &mut Report) -> Vec<MetricsLog> {
    let exp = load_scenario("fig7_ddos_c2.scn");
    let logs: Vec<MetricsLog> = run_experiment(&exp, &[1, 2, 4])
        .into_iter()
        .map(|o| o.unwrap().log)
        .collect();
    let s: Vec<Summary> = summarize(&logs, STEADY);
    let ratio = s[1].data_ratio_vs_single.unwrap_or(0.0);
    let further = 1.0 - s[2].mean_data_util / s[1].mean_data_util;
    r.line(
        2,
        "data-traffic reduction",
        in_range(ratio, 1.4, 1.8) && in_range(further, 0.10, 0.30),
        format!("C1/C2 {ratio:.3}, C4 vs C2 -{:.1}%", further * 100.0),
    );
    let f: Vec<f64> = s.iter().map(|x| x.replication_fraction).collect();
    r.line(
        3,
        "replication overhead",
        f[0] == 0.0 && in_range(f[1], 0.08, 0.18) && in_range(f[2], 0.18, 0.30),
        format!(
            "C=1 {:.1}%, C=2 {:.1}%, C=4 {:.1}%",
            f[0] * 100.0,
            f[1] * 100.0,
            f[2] * 100.0
        ),
    );
    logs
}

fn rate_limit(r: &mut Report) -> MetricsLog {
    let exp = load_scenario("fig8_ratelimit.scn");
    let log = exp.run(exp.replica_count).unwrap().log;
    let s = &summarize(std::slice::from_ref(&log), STEADY)[0];
    let agg = s.aggregate_throughput_bps;
    r.line(
        4,
        "distributed rate limiting",
        (agg - 8e6).abs() <= 0.15 * 8e6 && s.min_flow_throughput_bps >= 2e6,
        format!(
            "aggregate {:.2} Mb/s, min flow {:.2} Mb/s",
            agg / 1e6,
            s.min_flow_throughput_bps / 1e6
        ),
    );
    log
}

fn consistency(r: &mut Report, logs: &[MetricsLog]) {
    let period = property(100, arb_period_case(), |(spec, wpd, r_min, kind)| {
        check_period(spec, wpd, r_min, kind)
    });
    let mut violations = 0;
    let mut samples = 0;
    let mut worst_margin = i64::MAX;
    for log in logs {
        for st in &log.info.states {
            for s in log.staleness.iter().filter(|s| s.state == st.state) {
                samples += 1;
                if s.staleness > st.staleness_bound {
                    violations += 1;
                }
                worst_margin = worst_margin.min(st.staleness_bound.0 as i64 - s.staleness.0 as i64);
            }
        }
    }
    let detail = match &period {
        Ok(()) => format!("100 period cases ok, {samples} staleness samples, {violations} over bound, min margin {:.3}ms", worst_margin as f64 / 1e6),
        Err(e) => format!("period property failed: {e}"),
    };
    r.line(
        5,
        "consistency bounds",
        period.is_ok() && violations == 0 && samples > 0,
        detail,
    );
}

fn wire(r: &mut Report) {
    let rt = property(1000, arb_stack(), |(h, inner)| check_round_trip(&h, inner));
    let golden = golden_vectors()
        .iter()
        .all(|(b, hex)| b.to_hex() == *hex && b.len_bits() % HEADER_BITS == 0);
    let frames = update_frame_bits(1) == 512 && update_frame_bits(2) == 560;
    let detail = match &rt {
        Ok(()) => format!("1000 round trips, golden {}, frames {}", golden, frames),
        Err(e) => e.clone(),
    };
    r.line(6, "wire format", rt.is_ok() && golden && frames, detail);
}

fn oracles(r: &mut Report) {
    let results = [
        (
            "steiner",
            property(100, arb_steiner_case(), |(g, p)| check_steiner(&g, &p)),
        ),
        (
            "betweenness",
            property(100, arb_betweenness_case(), |(g, w)| {
                check_betweenness(&g, &w)
            }),
        ),
        (
            "link-lb",
            property(1000, arb_loads(), |l| check_link_lb(&l)),
        ),
    ];
    let failures: Vec<String> = results
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    let detail = if failures.is_empty() {
        "steiner 100, betweenness 100, link-lb 1000".to_string()
    } else {
        failures.join("; ")
    };
    r.line(7, "oracle equivalence", failures.is_empty(), detail);
}

fn memory(r: &mut Report, logs: &[MetricsLog]) {
    let mut ok = true;
    let mut parts = Vec::new();
    for log in logs {
        let c = log.info.replica_count as u64;
        let bits: Vec<u64> = log.info.memory_bits.iter().map(|(_, b)| *b).collect();
        ok &= bits.len() as u64 == c && bits.iter().all(|&b| b == 32 * (c + 1));
        parts.push(format!("C={c} {bits:?}"));
    }
    r.line(8, "memory accounting", ok, parts.join(", "));
}

fn determinism(r: &mut Report) {
    let mut mismatched = Vec::new();
    for name in SCENARIOS {
        let exp = load_scenario(name);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            exp.run(exp.replica_count)
                .unwrap()
                .log
                .write_csv(d.path(), STEADY)
                .unwrap();
        }
        let mut files: Vec<_> = std::fs::read_dir(dirs[0].path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        files.sort();
        for f in files {
            let a = std::fs::read(dirs[0].path().join(&f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(&f)).unwrap();
            if a != b {
                mismatched.push(format!("{name}/{}", f.to_string_lossy()));
            }
        }
    }
    let detail = if mismatched.is_empty() {
        format!("{} scenarios byte-identical", SCENARIOS.len())
    } else {
        mismatched.join(", ")
    };
    r.line(9, "determinism", mismatched.is_empty(), detail);
}

fn main() -> ExitCode {
    let mut r = Report { failed: 0 };
    detection(&mut r);
    let logs = sweep_criteria(&mut r);
    let fig8 = rate_limit(&mut r);
    let mut runs = logs.clone();
    runs.push(fig8);
    consistency(&mut r, &runs);
    wire(&mut r);
    oracles(&mut r);
    memory(&mut r, &logs);
    determinism(&mut r);
    println!("acceptance: {} of 9 criteria passed", 9 - r.failed);
    if r.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
