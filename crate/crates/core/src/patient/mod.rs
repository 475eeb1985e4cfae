//! Scenario scripts and the simulated standardized patient that plays them.

mod scenario;
mod sim;

pub use scenario::{
    load_scenario, Alternative, Disclosure, Escalation, Fact, FindingSource, GroundTruth,
    Interjection, Maneuver, RedFlag, ScenarioError, ScenarioScript, Severity, UnevokedSign,
    Violation, SCENARIO_SCHEMA,
};
pub use sim::{
    actor_reply, execute_maneuver, match_probe, parse_duration_s, visible_state, Disclosed,
    ManeuverOutcome, PatientError, PatientSim, PatientState, PatientTurn,
};
