//! Deterministic multi-client simulation of a colier session.
//!
//! A [`Simulation`] wires one in-process [`colier_server::Hub`] to any number
//! of headless [`colier_client::ClientCore`]s through links with injected
//! latency, all driven by a virtual clock. Workloads come from
//! [`generate_ops`]; scripted races can be fed in as [`ScriptedChange`]s.
//! The result is a [`ScenarioReport`] that says whether every replica ended
//! byte-equal to the server.

mod config;
mod convergence;
mod engine;
mod workload;

pub use config::{ConfigError, ConflictMix, ScenarioConfig, SessionTemplate};
pub use convergence::{check_convergence, document_hash, Convergence, Divergence};
pub use engine::{run_scenario, ScenarioReport, ScriptedChange, SimError, Simulation};
pub use workload::{generate_ops, resolve_intent, Category, Intent, IntentKind, Schedule};
