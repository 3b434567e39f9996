//! Scenario files: a line-oriented, sectioned text format.
//!
//! ```text
//! format_version = 1
//! name = demo
//! seed = 7
//! t_end = 10s
//!
//! [topology]
//! switch S1
//! switch L1 tier=0
//! host H1 external
//! link H1 S1 delay=0.1ms capacity=10Mbps
//!
//! [application]
//! app = ddos
//! threshold = 1000
//! epsilon_t = 16ms
//!
//! [embedding]
//! replicas = 2
//! r_min = 200
//! weights = auto
//!
//! [flow]
//! src = H1
//! dst = H2
//! rate = 100pps
//! size = 512b
//! flags = syn
//! ```
//!
//! `#` starts a comment. `[flow]` and `[external]` may repeat.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::apps::{AppConfig, APP_NAMES};
use crate::embedding::TriggerModeKind;
use crate::experiment::{Experiment, NamedWrite, Weights};
use crate::sim::{FlagPattern, Flow, Ramp, SimConfig};
use crate::time::Nanos;
use crate::topology::TopologyBuilder;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse {
        line,
        message: message.into(),
    }
}

fn invalid(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        line,
        message: message.into(),
    }
}

/// Splits `value` into its numeric prefix and unit suffix.
fn split_unit(value: &str) -> Option<(f64, &str)> {
    let value = value.trim();
    let end = value
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
        .unwrap_or(value.len());
    // An exponent marker directly followed by a letter belongs to the unit.
    let (mut num, mut unit) = value.split_at(end);
    if num.ends_with(['e', 'E']) {
        num = &num[..num.len() - 1];
        unit = &value[num.len()..];
    }
    let v: f64 = num.parse().ok()?;
    v.is_finite().then_some((v, unit.trim()))
}

pub fn parse_duration(value: &str) -> Option<Nanos> {
    let (v, unit) = split_unit(value)?;
    let scale = match unit {
        "ns" => 1.0,
        "us" => 1e3,
        "ms" => 1e6,
        "s" => 1e9,
        _ => return None,
    };
    (v >= 0.0).then(|| Nanos((v * scale).round() as u64))
}

/// Bits per second.
pub fn parse_bandwidth(value: &str) -> Option<f64> {
    let (v, unit) = split_unit(value)?;
    let scale = match unit {
        "bps" => 1.0,
        "kbps" | "Kbps" => 1e3,
        "Mbps" => 1e6,
        "Gbps" => 1e9,
        _ => return None,
    };
    (v >= 0.0).then_some(v * scale)
}

/// Bits.
pub fn parse_size(value: &str) -> Option<u64> {
    let (v, unit) = split_unit(value)?;
    let scale = match unit {
        "b" => 1.0,
        "B" => 8.0,
        "kb" => 1e3,
        "KB" | "kB" => 8e3,
        _ => return None,
    };
    (v > 0.0).then(|| (v * scale).round() as u64)
}

/// A packet rate: `pps` directly, otherwise a bandwidth divided by `size`.
fn parse_rate(value: &str, size_bits: u64) -> Option<f64> {
    let (v, unit) = split_unit(value)?;
    if unit == "pps" {
        return (v >= 0.0).then_some(v);
    }
    parse_bandwidth(value).map(|bps| bps / size_bits as f64)
}

#[derive(Debug, Default)]
struct Section {
    name: String,
    line: usize,
    keys: BTreeMap<String, (usize, String)>,
    lines: Vec<(usize, String)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.keys.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<(usize, String), ScenarioError> {
        self.take(key)
            .ok_or_else(|| invalid(self.line, format!("[{}] is missing `{key}`", self.name)))
    }

    fn finish(self) -> Result<(), ScenarioError> {
        match self.keys.into_iter().next() {
            Some((k, (line, _))) => Err(parse_err(
                line,
                format!("unknown key `{k}` in [{}]", self.name),
            )),
            None => Ok(()),
        }
    }
}

fn sections(text: &str) -> Result<Vec<Section>, ScenarioError> {
    let mut out = vec![Section {
        name: "header".into(),
        line: 1,
        ..Section::default()
    }];
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line, "unterminated section header"))?
                .trim();
            if !matches!(
                name,
                "topology" | "application" | "embedding" | "sim" | "flow" | "external"
            ) {
                return Err(parse_err(line, format!("unknown section [{name}]")));
            }
            out.push(Section {
                name: name.to_string(),
                line,
                ..Section::default()
            });
            continue;
        }
        let sec = out.last_mut().expect("header section");
        if sec.name == "topology" {
            sec.lines.push((line, content.to_string()));
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected `key = value`, got `{content}`")))?;
        let k = k.trim().to_string();
        if sec
            .keys
            .insert(k.clone(), (line, v.trim().to_string()))
            .is_some()
        {
            return Err(parse_err(line, format!("duplicate key `{k}`")));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>((line, v): &(usize, String), what: &str) -> Result<T, ScenarioError> {
    v.parse()
        .map_err(|_| parse_err(*line, format!("`{what}` expects a number, got `{v}`")))
}

fn dur((line, v): &(usize, String), what: &str) -> Result<Nanos, ScenarioError> {
    parse_duration(v).ok_or_else(|| {
        parse_err(
            *line,
            format!("`{what}` expects a duration like 10ms, got `{v}`"),
        )
    })
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn build_topology(sec: &Section) -> Result<TopologyBuilder, ScenarioError> {
    let mut b = TopologyBuilder::new();
    for (line, content) in &sec.lines {
        let words: Vec<&str> = content.split_whitespace().collect();
        match words.as_slice() {
            ["switch", name] => {
                b.switch(name);
            }
            ["switch", name, tier] => {
                let t = tier
                    .strip_prefix("tier=")
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(*line, format!("expected tier=N, got `{tier}`")))?;
                b.tiered_switch(name, t);
            }
            ["host", name] => {
                b.host(name, false);
            }
            ["host", name, "external"] => {
                b.host(name, true);
            }
            ["link", a, bn, rest @ ..] => {
                let mut delay = None;
                let mut cap = None;
                for attr in rest {
                    match attr.split_once('=') {
                        Some(("delay", v)) => delay = parse_duration(v),
                        Some(("capacity", v)) => cap = parse_bandwidth(v),
                        _ => {
                            return Err(parse_err(
                                *line,
                                format!("unknown link attribute `{attr}`"),
                            ))
                        }
                    }
                }
                let delay = delay.ok_or_else(|| parse_err(*line, "link needs delay=<duration>"))?;
                let cap = cap.ok_or_else(|| parse_err(*line, "link needs capacity=<bandwidth>"))?;
                if cap < 1.0 {
                    return Err(invalid(*line, "link capacity must be positive"));
                }
                b.link(a, bn, delay, cap.round() as u64);
            }
            _ => {
                return Err(parse_err(
                    *line,
                    format!("cannot parse topology line `{content}`"),
                ))
            }
        }
    }
    Ok(b)
}

fn parse_app(sec: &mut Section) -> Result<AppConfig, ScenarioError> {
    let (line, app) = sec.required("app")?;
    let cfg = match app.as_str() {
        "ddos" => AppConfig::Ddos {
            threshold: num(&sec.required("threshold")?, "threshold")?,
            epsilon_t: dur(&sec.required("epsilon_t")?, "epsilon_t")?,
        },
        "ratelimit" => {
            let target = sec.required("target")?;
            AppConfig::RateLimit {
                target_bps: parse_bandwidth(&target.1).ok_or_else(|| {
                    parse_err(
                        target.0,
                        format!("`target` expects a bandwidth, got `{}`", target.1),
                    )
                })?,
                epsilon_r: num(&sec.required("epsilon_r")?, "epsilon_r")?,
                max_write_rate: num(&sec.required("max_write_rate")?, "max_write_rate")?,
            }
        }
        "linklb" => AppConfig::LinkLb {
            uplinks: list(&sec.required("uplinks")?.1),
            downlinks: list(&sec.required("downlinks")?.1),
            epsilon_r: num(&sec.required("epsilon_r")?, "epsilon_r")?,
            max_write_rate: num(&sec.required("max_write_rate")?, "max_write_rate")?,
        },
        "resourcelb" => AppConfig::ResourceLb {
            servers: list(&sec.required("servers")?.1),
            writers: list(&sec.required("writers")?.1),
            thr: num(&sec.required("thr")?, "thr")?,
            epsilon_r: num(&sec.required("epsilon_r")?, "epsilon_r")?,
            max_write_rate: num(&sec.required("max_write_rate")?, "max_write_rate")?,
        },
        other => {
            return Err(invalid(
                line,
                format!(
                    "unknown app `{other}`; expected one of {}",
                    APP_NAMES.join(", ")
                ),
            ))
        }
    };
    Ok(cfg)
}

fn parse_flow(
    sec: &mut Section,
    index: usize,
    t_end: Nanos,
) -> Result<(usize, String, String, Flow), ScenarioError> {
    let line = sec.line;
    let name = sec
        .take("name")
        .map_or_else(|| format!("flow{}", index + 1), |(_, v)| v);
    let src = sec.required("src")?.1;
    let dst = sec.required("dst")?.1;
    let size_bits = match sec.take("size") {
        Some((l, v)) => parse_size(&v)
            .ok_or_else(|| parse_err(l, format!("`size` expects e.g. 512b, got `{v}`")))?,
        None => 512,
    };
    let (rl, rv) = sec.required("rate")?;
    let rate_pps = parse_rate(&rv, size_bits)
        .ok_or_else(|| parse_err(rl, format!("`rate` expects pps or bps, got `{rv}`")))?;
    let start = sec
        .take("start")
        .map(|v| dur(&v, "start"))
        .transpose()?
        .unwrap_or(Nanos::ZERO);
    let stop = sec
        .take("stop")
        .map(|v| dur(&v, "stop"))
        .transpose()?
        .unwrap_or(t_end);
    let flags = match sec.take("flags") {
        None => FlagPattern::FirstSyn,
        Some((l, v)) => match v.as_str() {
            "syn" => FlagPattern::Syn,
            "first_syn" => FlagPattern::FirstSyn,
            "none" => FlagPattern::None,
            _ => {
                return Err(parse_err(
                    l,
                    format!("`flags` expects syn, first_syn or none, got `{v}`"),
                ))
            }
        },
    };
    let ramp = match sec.take("ramp_to") {
        None => None,
        Some((l, v)) => {
            let to_pps = parse_rate(&v, size_bits)
                .ok_or_else(|| parse_err(l, format!("`ramp_to` expects a rate, got `{v}`")))?;
            let start = dur(&sec.required("ramp_start")?, "ramp_start")?;
            let end = dur(&sec.required("ramp_end")?, "ramp_end")?;
            if end < start {
                return Err(invalid(l, "ramp_end precedes ramp_start"));
            }
            Some(Ramp { to_pps, start, end })
        }
    };
    if stop < start {
        return Err(invalid(line, "flow stops before it starts"));
    }
    let flow = Flow {
        name,
        src: 0,
        dst: 0,
        rate_pps,
        size_bits,
        start,
        stop,
        flags,
        ramp,
    };
    Ok((line, src, dst, flow))
}

/// Parses and validates a scenario into a runnable experiment.
pub fn parse_scenario(text: &str) -> Result<Experiment, ScenarioError> {
    let mut secs = sections(text)?.into_iter();
    let mut header = secs.next().expect("header section");
    let (vl, version) = header
        .take("format_version")
        .ok_or_else(|| invalid(1, "missing `format_version`"))?;
    let version: u32 = num(&(vl, version), "format_version")?;
    if version != FORMAT_VERSION {
        return Err(invalid(vl, format!("unsupported format_version {version}")));
    }
    let name = header
        .take("name")
        .map_or_else(|| "scenario".to_string(), |(_, v)| v);
    let seed: u64 = num(&header.required("seed")?, "seed")?;
    let t_end = dur(&header.required("t_end")?, "t_end")?;
    if t_end == Nanos::ZERO {
        return Err(invalid(header.line, "t_end must be positive"));
    }
    header.finish()?;

    let mut sim = SimConfig {
        seed,
        t_end,
        ..SimConfig::default()
    };
    let mut topo_builder = None;
    let mut topo_line = 0;
    let mut app = None;
    let mut replicas = 1usize;
    let mut replicas_line = 0;
    let mut r_min = 1.0;
    let mut weights = Weights::Auto;
    let mut trigger_mode = TriggerModeKind::Time;
    let mut pinned = None;
    let mut raw_flows = Vec::new();
    let mut external = Vec::new();

    for mut sec in secs {
        match sec.name.as_str() {
            "topology" => {
                topo_line = sec.line;
                topo_builder = Some(build_topology(&sec)?);
            }
            "application" => app = Some(parse_app(&mut sec)?),
            "embedding" => {
                if let Some(v) = sec.take("replicas") {
                    replicas_line = v.0;
                    replicas = num(&v, "replicas")?;
                }
                if let Some(v) = sec.take("r_min") {
                    r_min = num::<f64>(&v, "r_min")?;
                    if r_min.is_nan() || r_min <= 0.0 {
                        return Err(invalid(v.0, "r_min must be positive"));
                    }
                }
                if let Some((l, v)) = sec.take("weights") {
                    if v != "auto" {
                        let mut map = BTreeMap::new();
                        for item in list(&v) {
                            let (n, w) = item.split_once(':').ok_or_else(|| {
                                parse_err(l, format!("weight `{item}` is not NAME:VALUE"))
                            })?;
                            let w: f64 = w.trim().parse().map_err(|_| {
                                parse_err(l, format!("weight `{item}` is not NAME:VALUE"))
                            })?;
                            map.insert(n.trim().to_string(), w);
                        }
                        weights = Weights::Explicit(map);
                    }
                }
                if let Some((l, v)) = sec.take("trigger_mode") {
                    trigger_mode = match v.as_str() {
                        "time" => TriggerModeKind::Time,
                        "packet" => TriggerModeKind::Packet,
                        _ => {
                            return Err(parse_err(
                                l,
                                format!("`trigger_mode` expects time or packet, got `{v}`"),
                            ))
                        }
                    };
                }
                if let Some((_, v)) = sec.take("replica_nodes") {
                    pinned = Some(list(&v));
                }
            }
            "sim" => {
                if let Some(v) = sec.take("queue_limit") {
                    sim.queue_limit = num(&v, "queue_limit")?;
                }
                if let Some(v) = sec.take("controller_delay") {
                    sim.controller_delay = dur(&v, "controller_delay")?;
                }
                if let Some(v) = sec.take("bin") {
                    sim.bin = dur(&v, "bin")?;
                    if sim.bin == Nanos::ZERO {
                        return Err(invalid(v.0, "bin must be positive"));
                    }
                }
                if let Some(v) = sec.take("estimator_delta") {
                    sim.estimator_delta = dur(&v, "estimator_delta")?;
                }
                if let Some(v) = sec.take("estimator_window") {
                    sim.estimator_window = num(&v, "estimator_window")?;
                    if !sim.estimator_window.is_power_of_two() {
                        return Err(invalid(v.0, "estimator_window must be a power of two"));
                    }
                }
            }
            "flow" => {
                let idx = raw_flows.len();
                raw_flows.push(parse_flow(&mut sec, idx, t_end)?);
            }
            "external" => {
                let at = dur(&sec.required("at")?, "at")?;
                let state = sec.required("state")?.1;
                let value = num(&sec.required("value")?, "value")?;
                external.push(NamedWrite { at, state, value });
            }
            _ => unreachable!("section names are checked while splitting"),
        }
        sec.finish()?;
    }

    let builder = topo_builder.ok_or_else(|| invalid(1, "missing [topology] section"))?;
    let topo = builder
        .build()
        .map_err(|e| invalid(topo_line, e.to_string()))?;
    let app = app.ok_or_else(|| invalid(1, "missing [application] section"))?;
    let switches = topo.switches().len();
    if replicas == 0 || replicas > switches {
        return Err(invalid(
            replicas_line,
            format!("replicas must lie in 1..={switches}, got {replicas}"),
        ));
    }
    let mut flows = Vec::new();
    for (line, src, dst, mut flow) in raw_flows {
        for (end, name) in [(&mut flow.src, &src), (&mut flow.dst, &dst)] {
            let id = topo
                .id(name)
                .ok_or_else(|| invalid(line, format!("unknown node {name}")))?;
            if topo.is_switch(id) {
                return Err(invalid(line, format!("flow endpoint {name} is not a host")));
            }
            *end = id;
        }
        flows.push(flow);
    }
    Ok(Experiment {
        name,
        topo: Arc::new(topo),
        app,
        replica_count: replicas,
        r_min,
        weights,
        trigger_mode,
        pinned_replicas: pinned,
        sim,
        flows,
        external,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = "format_version = 1\nseed = 3\nt_end = 1s\n\n[topology]\nswitch S1\nswitch S2\nhost A external\nhost B\nlink A S1 delay=10us capacity=10Mbps\nlink S1 S2 delay=0.2ms capacity=10Mbps\nlink B S2 delay=10us capacity=10Mbps\n\n[application]\napp = ddos\nthreshold = 100\nepsilon_t = 20ms\n\n[embedding]\nreplicas = 2\nr_min = 50\n\n[flow]\nsrc = A\ndst = B\nrate = 100pps\nflags = syn\n";

    #[test]
    fn units() {
        assert_eq!(parse_duration("0.2ms"), Some(Nanos(200_000)));
        assert_eq!(parse_duration("16ms"), Some(Nanos::from_millis(16)));
        assert_eq!(parse_duration("3"), None);
        assert_eq!(parse_bandwidth("10Mbps"), Some(10e6));
        assert_eq!(parse_size("1500B"), Some(12_000));
        assert_eq!(parse_rate("5Mbps", 12_000), Some(5e6 / 12_000.0));
    }

    #[test]
    fn parses_minimal() {
        let exp = parse_scenario(MINI).unwrap();
        assert_eq!(exp.sim.seed, 3);
        assert_eq!(exp.replica_count, 2);
        assert_eq!(exp.flows.len(), 1);
        assert_eq!(exp.flows[0].flags, FlagPattern::Syn);
    }

    #[test]
    fn missing_seed_is_rejected() {
        let text = MINI.replace("seed = 3\n", "");
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::Validation { .. })
        ));
    }

    #[test]
    fn too_many_replicas() {
        let text = MINI.replace("replicas = 2", "replicas = 3");
        match parse_scenario(&text) {
            Err(ScenarioError::Validation { line, .. }) => assert_eq!(line, 20),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_line_of_bad_key() {
        let text = MINI.replace("r_min = 50", "r_min = fast");
        match parse_scenario(&text) {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 21),
            other => panic!("unexpected {other:?}"),
        }
    }
}
