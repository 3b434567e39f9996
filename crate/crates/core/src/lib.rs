//! Network-wide applications over replicated switch state.
//!
//! The crate covers the full pipeline: describing an application as a graph
//! of states, reductions, triggers and activities ([`app_model`]), lowering it
//! to switch primitives ([`compiler`]), placing replicas and solving the
//! replication period ([`embedding`]), the update wire format and replica
//! stores ([`replication`]), the four reference applications ([`apps`]), a
//! deterministic packet-level simulator ([`sim`]) and scenario/metrics
//! tooling ([`scenario`], [`metrics`], [`experiment`]).

pub mod app_model;
pub mod apps;
pub mod compiler;
pub mod embedding;
pub mod experiment;
pub mod metrics;
pub mod par;
pub mod replication;
pub mod scenario;
pub mod sim;
pub mod time;
pub mod topology;

pub use time::Nanos;
