//! Compile, embed and simulate one scenario for a set of replica counts.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::app_model::build_dag;
use crate::apps::{AppConfig, AppError};
use crate::compiler::{
    assign_state_ids, compile, Capabilities, CompileError, IdRegistry, PrimitiveProgram,
    RegistryError,
};
use crate::embedding::{
    effective_replica_count, embed, EmbeddingConfig, EmbeddingError, TriggerModeKind,
};
use crate::par;
use crate::sim::{simulate, ExternalWrite, Flow, SimConfig, SimError, SimOutput, SimSetup};
use crate::time::Nanos;
use crate::topology::{NodeId, Topology};

/// How switch traffic weights for centrality are obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    /// Mean offered load of the flows entering the network at each switch.
    Auto,
    Explicit(BTreeMap<String, f64>),
}

/// An external write addressed by state name.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedWrite {
    pub at: Nanos,
    pub state: String,
    pub value: u64,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub topo: Arc<Topology>,
    pub app: AppConfig,
    pub replica_count: usize,
    pub r_min: f64,
    pub weights: Weights,
    pub trigger_mode: TriggerModeKind,
    pub pinned_replicas: Option<Vec<String>>,
    pub sim: SimConfig,
    pub flows: Vec<Flow>,
    pub external: Vec<NamedWrite>,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    App(#[from] AppError),
    #[error(transparent)]
    Validation(#[from] crate::app_model::UnvalidatedApplication),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("unknown state {0} in external write")]
    UnknownState(String),
}

/// Time-averaged packet rate of a flow over `[start, min(stop, t_end))`.
fn mean_rate(f: &Flow, t_end: Nanos) -> f64 {
    let stop = f.stop.min(t_end);
    if stop <= f.start {
        return 0.0;
    }
    let Some(r) = f.ramp else {
        return f.rate_pps;
    };
    let span = (stop.0 - f.start.0) as f64;
    let clip = |t: Nanos| t.max(f.start).min(stop).0 as f64;
    let (a, b) = (clip(r.start), clip(r.end));
    let before = (a - f.start.0 as f64) * f.rate_pps;
    let ramp = if b > a {
        let mid = f.rate_at(Nanos(((a + b) / 2.0) as u64));
        (b - a) * mid
    } else {
        0.0
    };
    let after = (stop.0 as f64 - b) * r.to_pps;
    (before + ramp + after) / span
}

impl Experiment {
    pub fn traffic_weights(&self) -> BTreeMap<NodeId, f64> {
        let mut w = BTreeMap::new();
        match &self.weights {
            Weights::Auto => {
                for f in &self.flows {
                    let bps = mean_rate(f, self.sim.t_end) * f.size_bits as f64;
                    *w.entry(self.topo.attachment(f.src)).or_insert(0.0) += bps;
                }
            }
            Weights::Explicit(map) => {
                for (name, v) in map {
                    if let Some(id) = self.topo.id(name) {
                        w.insert(id, *v);
                    }
                }
            }
        }
        w
    }

    /// Compiled program with dense state ids for `replicas` replicas.
    pub fn program(&self, replicas: usize) -> Result<PrimitiveProgram, ExperimentError> {
        let spec = self.app.build(replicas)?;
        let dag = build_dag(&spec)?;
        let program = compile(&dag, &Capabilities::all(), self.sim.estimator_window)?;
        Ok(assign_state_ids(program, &mut IdRegistry::new())?)
    }

    /// Everything needed to simulate the scenario with `replicas` replicas.
    pub fn prepare(&self, replicas: usize) -> Result<SimSetup, ExperimentError> {
        let pinned = match &self.pinned_replicas {
            Some(names) => Some(
                names
                    .iter()
                    .map(|n| {
                        self.topo
                            .id(n)
                            .ok_or_else(|| EmbeddingError::UnknownNode(n.clone()))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let app_replicas = pinned.as_ref().map_or(replicas, Vec::len);
        // Programs whose budgets forbid replication collapse to one replica.
        let probe = self.program(app_replicas)?;
        let c = if pinned.is_some() {
            app_replicas
        } else {
            effective_replica_count(&probe, replicas)
        };
        let program = if c == app_replicas {
            probe
        } else {
            self.program(c)?
        };
        let config = EmbeddingConfig {
            replica_count: c,
            traffic_weights: self.traffic_weights(),
            pinned_replicas: pinned,
            r_min: self.r_min,
            trigger_mode: self.trigger_mode,
        };
        let embedding = embed(&self.topo, &program, &config)?;
        let external = self
            .external
            .iter()
            .map(|w| {
                let state = program
                    .state_by_name(&w.state)
                    .ok_or_else(|| ExperimentError::UnknownState(w.state.clone()))?;
                Ok(ExternalWrite {
                    at: w.at,
                    state: state.id,
                    value: w.value,
                })
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        let egress_targets = self
            .app
            .egress_targets()
            .iter()
            .map(|n| {
                self.topo
                    .id(n)
                    .ok_or_else(|| EmbeddingError::UnknownNode(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SimSetup {
            scenario: self.name.clone(),
            app: self.app.name().to_string(),
            topo: Arc::clone(&self.topo),
            program: Arc::new(program),
            embedding,
            replica_bound: self.app.replica_bound(),
            egress_targets,
            flows: self.flows.clone(),
            external,
            replica_count: c,
        })
    }

    pub fn run(&self, replicas: usize) -> Result<SimOutput, ExperimentError> {
        let setup = self.prepare(replicas)?;
        Ok(simulate(setup, self.sim.clone())?)
    }
}

/// Runs one simulation per replica count, in parallel when enabled. Results
/// keep the order of `sweep`.
pub fn run_experiment(
    exp: &Experiment,
    sweep: &[usize],
) -> Vec<Result<SimOutput, ExperimentError>> {
    par::map(sweep, |&c| exp.run(c))
}

pub fn run_experiment_sequential(
    exp: &Experiment,
    sweep: &[usize],
) -> Vec<Result<SimOutput, ExperimentError>> {
    par::map_sequential(sweep, |&c| exp.run(c))
}
