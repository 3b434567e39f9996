//! The four reference applications and the windowed rate estimator.

use thiserror::Error;

use crate::app_model::{
    Action, ActivitySpec, ApplicationSpec, DropFormula, EgressConst, EgressSource,
    InconsistencySpec, PortClass, Predicate, ReductionPrimitive, ReductionSpec, SampleUnit,
    ScopeFilter, StateSpec, TriggerSpec, ValueKind,
};
use crate::time::Nanos;

pub const DEFAULT_DELTA: Nanos = Nanos(100_000_000);
pub const DEFAULT_WINDOW: u32 = 8;
/// Fixed-point scale of CPU loads: 1000 means fully loaded.
pub const LOAD_SCALE: u64 = 1000;

/// Rate over the last `w` closed buckets of width `delta`. Buckets are
/// aligned to multiples of `delta`; each closed bucket stores its rate in
/// units per second and the estimate is their sum shifted right by
/// `log2(w)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateEstimatorWindow {
    delta: Nanos,
    log2_w: u32,
    ring: Vec<u64>,
    head: usize,
    bucket: u64,
    current: u64,
}

impl RateEstimatorWindow {
    /// `w` must be a power of two and `delta` positive.
    pub fn new(delta: Nanos, w: u32) -> RateEstimatorWindow {
        assert!(w.is_power_of_two(), "window length must be a power of two");
        assert!(delta > Nanos::ZERO, "bucket width must be positive");
        RateEstimatorWindow {
            delta,
            log2_w: w.trailing_zeros(),
            ring: vec![0; w as usize],
            head: 0,
            bucket: 0,
            current: 0,
        }
    }

    pub fn window(&self) -> u32 {
        self.ring.len() as u32
    }

    fn rotate(&mut self, t: Nanos) {
        let idx = t.0 / self.delta.0;
        if idx <= self.bucket {
            return;
        }
        let w = self.ring.len() as u64;
        let scale =
            |count: u64| ((count as u128 * 1_000_000_000u128) / self.delta.0 as u128) as u64;
        let closing = scale(self.current);
        self.ring[self.head] = closing;
        self.head = (self.head + 1) % self.ring.len();
        let empty = (idx - self.bucket - 1).min(w);
        for _ in 0..empty {
            self.ring[self.head] = 0;
            self.head = (self.head + 1) % self.ring.len();
        }
        self.bucket = idx;
        self.current = 0;
    }

    pub fn update(&mut self, t: Nanos, increment: u64) {
        self.rotate(t);
        self.current = self.current.saturating_add(increment);
    }

    pub fn read(&mut self, t: Nanos) -> u64 {
        self.rotate(t);
        let sum: u128 = self.ring.iter().map(|&r| r as u128).sum();
        (sum >> self.log2_w) as u64
    }
}

pub fn make_ddos_app(n: usize, threshold: f64, epsilon_t: Nanos) -> ApplicationSpec {
    let states: Vec<StateSpec> = (1..=n)
        .map(|k| {
            StateSpec::new(
                format!("syn_rate_{k}"),
                ScopeFilter::external_syn(),
                ValueKind::RateEstimate,
            )
        })
        .collect();
    ApplicationSpec {
        name: "ddos".into(),
        reductions: vec![ReductionSpec {
            inputs: states.iter().map(|s| s.name.clone()).collect(),
            primitive: ReductionPrimitive::Sum,
            output_name: "syn_total".into(),
        }],
        states,
        triggers: vec![TriggerSpec {
            name: "ddos_detect".into(),
            input: "syn_total".into(),
            predicate: Predicate::GreaterThan(threshold),
            inconsistency: InconsistencySpec::TimeObsolescence { epsilon_t },
            activity: "alert".into(),
        }],
        activities: vec![ActivitySpec {
            name: "alert".into(),
            target_class: ScopeFilter::external(),
            action: Action::NotifyController("DDoS detected".into()),
            sequential_group: None,
        }],
    }
}

/// Rates are measured in bits per second on packets entering the domain.
pub fn make_rate_limiter_app(
    n: usize,
    target_bps: f64,
    epsilon_r: u64,
    max_write_rate: f64,
) -> ApplicationSpec {
    let states: Vec<StateSpec> = (1..=n)
        .map(|k| {
            StateSpec::new(
                format!("in_rate_{k}"),
                ScopeFilter::external(),
                ValueKind::RateEstimate,
            )
            .counting(SampleUnit::Bits)
        })
        .collect();
    ApplicationSpec {
        name: "ratelimit".into(),
        reductions: vec![ReductionSpec {
            inputs: states.iter().map(|s| s.name.clone()).collect(),
            primitive: ReductionPrimitive::Sum,
            output_name: "agg_rate".into(),
        }],
        states,
        triggers: vec![TriggerSpec {
            name: "limit".into(),
            input: "agg_rate".into(),
            predicate: Predicate::Probabilistic(DropFormula::ExcessOver { target: target_bps }),
            inconsistency: InconsistencySpec::UpdateError {
                epsilon_r,
                max_write_rate,
            },
            activity: "drop".into(),
        }],
        activities: vec![ActivitySpec {
            name: "drop".into(),
            target_class: ScopeFilter::external(),
            action: Action::DropPacket,
            sequential_group: None,
        }],
    }
}

/// States `ul_1..ul_P` (uplink loads) then `dl_1..dl_P` (downlink loads
/// towards the destination leaf), in bits per second.
pub fn make_link_lb_app(p: usize, epsilon_r: u64, max_write_rate: f64) -> ApplicationSpec {
    let mut states = Vec::new();
    for i in 1..=p {
        states.push(
            StateSpec::new(
                format!("ul_{i}"),
                ScopeFilter::port(PortClass::Uplink),
                ValueKind::RateEstimate,
            )
            .counting(SampleUnit::Bits),
        );
    }
    for i in 1..=p {
        states.push(
            StateSpec::new(
                format!("dl_{i}"),
                ScopeFilter::port(PortClass::Downlink),
                ValueKind::RateEstimate,
            )
            .counting(SampleUnit::Bits),
        );
    }
    ApplicationSpec {
        name: "linklb".into(),
        reductions: vec![ReductionSpec {
            inputs: states.iter().map(|s| s.name.clone()).collect(),
            primitive: ReductionPrimitive::MinMaxArgMin,
            output_name: "best_spine".into(),
        }],
        states,
        triggers: vec![TriggerSpec {
            name: "route_new_flow".into(),
            input: "best_spine".into(),
            predicate: Predicate::Always,
            inconsistency: InconsistencySpec::UpdateError {
                epsilon_r,
                max_write_rate,
            },
            activity: "pin_flow".into(),
        }],
        activities: vec![ActivitySpec {
            name: "pin_flow".into(),
            target_class: ScopeFilter::syn(),
            action: Action::InsertFlowRule(EgressSource::Reduced("best_spine".into())),
            sequential_group: None,
        }],
    }
}

/// `thr` is a load fraction in (0, 1); loads are compared in `LOAD_SCALE`
/// fixed point.
pub fn make_resource_lb_app(
    n: usize,
    thr: f64,
    epsilon_r: u64,
    max_write_rate: f64,
) -> ApplicationSpec {
    let states: Vec<StateSpec> = (1..=n)
        .map(|k| {
            StateSpec::new(format!("cpu_{k}"), ScopeFilter::any(), ValueKind::Scalar).width(16)
        })
        .collect();
    let inputs: Vec<String> = states.iter().map(|s| s.name.clone()).collect();
    let threshold = thr * LOAD_SCALE as f64;
    let budget = InconsistencySpec::UpdateError {
        epsilon_r,
        max_write_rate,
    };
    ApplicationSpec {
        name: "resourcelb".into(),
        states,
        reductions: vec![
            ReductionSpec {
                inputs: inputs.clone(),
                primitive: ReductionPrimitive::ArgMin,
                output_name: "r1".into(),
            },
            ReductionSpec {
                inputs,
                primitive: ReductionPrimitive::Mean,
                output_name: "r2".into(),
            },
        ],
        triggers: vec![
            TriggerSpec {
                name: "has_capacity".into(),
                input: "r2".into(),
                predicate: Predicate::LessOrEqual(threshold),
                inconsistency: budget,
                activity: "to_server".into(),
            },
            TriggerSpec {
                name: "overloaded".into(),
                input: "r2".into(),
                predicate: Predicate::GreaterThan(threshold),
                inconsistency: budget,
                activity: "to_controller".into(),
            },
        ],
        activities: vec![
            ActivitySpec {
                name: "to_server".into(),
                target_class: ScopeFilter::syn(),
                action: Action::SetEgress(EgressSource::Reduced("r1".into())),
                sequential_group: Some(0),
            },
            ActivitySpec {
                name: "to_controller".into(),
                target_class: ScopeFilter::syn(),
                action: Action::SetEgress(EgressSource::Constant(EgressConst::ControllerPort)),
                sequential_group: Some(0),
            },
        ],
    }
}

/// Names under which scenario files refer to the applications.
pub const APP_NAMES: [&str; 4] = ["ddos", "ratelimit", "linklb", "resourcelb"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AppError {
    #[error("unknown application {0}; expected one of ddos, ratelimit, linklb, resourcelb")]
    UnknownApp(String),
    #[error("{0}")]
    BadParameter(String),
}

/// Application choice plus parameters, as read from a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum AppConfig {
    Ddos {
        threshold: f64,
        epsilon_t: Nanos,
    },
    RateLimit {
        target_bps: f64,
        epsilon_r: u64,
        max_write_rate: f64,
    },
    LinkLb {
        /// `leaf->spine` ports measured for uplink load, one per spine.
        uplinks: Vec<String>,
        /// `spine->leaf` ports measured for downlink load, one per spine.
        downlinks: Vec<String>,
        epsilon_r: u64,
        max_write_rate: f64,
    },
    ResourceLb {
        servers: Vec<String>,
        thr: f64,
        epsilon_r: u64,
        max_write_rate: f64,
        /// Switch writing each server's load (normally its access switch).
        writers: Vec<String>,
    },
}

impl AppConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AppConfig::Ddos { .. } => "ddos",
            AppConfig::RateLimit { .. } => "ratelimit",
            AppConfig::LinkLb { .. } => "linklb",
            AppConfig::ResourceLb { .. } => "resourcelb",
        }
    }

    /// Whether states are bound one per replica switch (and monitored traffic
    /// must be steered through a replica).
    pub fn replica_bound(&self) -> bool {
        matches!(self, AppConfig::Ddos { .. } | AppConfig::RateLimit { .. })
    }

    /// Instantiates the application for `replicas` replica switches.
    pub fn build(&self, replicas: usize) -> Result<ApplicationSpec, AppError> {
        match self {
            AppConfig::Ddos {
                threshold,
                epsilon_t,
            } => {
                if threshold.is_nan() || *threshold <= 0.0 {
                    return Err(AppError::BadParameter("threshold must be positive".into()));
                }
                Ok(make_ddos_app(replicas, *threshold, *epsilon_t))
            }
            AppConfig::RateLimit {
                target_bps,
                epsilon_r,
                max_write_rate,
            } => {
                if target_bps.is_nan() || *target_bps <= 0.0 {
                    return Err(AppError::BadParameter(
                        "target rate must be positive".into(),
                    ));
                }
                Ok(make_rate_limiter_app(
                    replicas,
                    *target_bps,
                    *epsilon_r,
                    *max_write_rate,
                ))
            }
            AppConfig::LinkLb {
                uplinks,
                downlinks,
                epsilon_r,
                max_write_rate,
            } => {
                if uplinks.is_empty() || uplinks.len() != downlinks.len() {
                    return Err(AppError::BadParameter(
                        "linklb needs one uplink and one downlink port per spine".into(),
                    ));
                }
                let mut app = make_link_lb_app(uplinks.len(), *epsilon_r, *max_write_rate);
                for (s, hint) in app.states.iter_mut().zip(uplinks.iter().chain(downlinks)) {
                    s.target_hint = Some(hint.clone());
                }
                Ok(app)
            }
            AppConfig::ResourceLb {
                servers,
                thr,
                epsilon_r,
                max_write_rate,
                writers,
            } => {
                if !(*thr > 0.0 && *thr < 1.0) {
                    return Err(AppError::BadParameter("thr must lie in (0, 1)".into()));
                }
                if servers.is_empty() || writers.len() != servers.len() {
                    return Err(AppError::BadParameter(
                        "one writer switch per server required".into(),
                    ));
                }
                let mut app =
                    make_resource_lb_app(servers.len(), *thr, *epsilon_r, *max_write_rate);
                for (s, w) in app.states.iter_mut().zip(writers) {
                    s.target_hint = Some(w.clone());
                }
                Ok(app)
            }
        }
    }

    /// Node names that egress index `i` of a `SetEgress`/`InsertFlowRule`
    /// activity refers to.
    pub fn egress_targets(&self) -> Vec<String> {
        match self {
            AppConfig::LinkLb { uplinks, .. } => uplinks
                .iter()
                .map(|u| {
                    u.split_once("->")
                        .map(|(_, s)| s.trim())
                        .unwrap_or(u)
                        .to_string()
                })
                .collect(),
            AppConfig::ResourceLb { servers, .. } => servers.clone(),
            _ => Vec::new(),
        }
    }
}
