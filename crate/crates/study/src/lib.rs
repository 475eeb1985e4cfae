//! Crossover study harness around the encounter engine.
//!
//! [`plan::make_plan`] randomizes arm order for every (actor, scenario) pair,
//! [`runner::run_study`] executes the plan against the scenario store and
//! grades each trace, [`analyze::analyze`] turns the graded encounters into a
//! reproducible report bundle, and [`service`] hosts live sessions over HTTP
//! and WebSocket for the human-facing console.

pub mod analyze;
pub mod config;
pub mod plan;
pub mod runner;
pub mod service;
pub mod store;

pub use analyze::{analyze, AnalysisConfig, AnalysisInput, ReportBundle};
pub use config::StudyConfig;
pub use plan::{make_plan, Assignment, ReplicationSpec, StudyPlan};
pub use runner::{run_encounter, run_study, Backends, RunContext, RunRecord, RunStatus};
pub use store::ScenarioStore;
