//! Bundled demonstration cases: three scenario scripts with their planner
//! protocols, case rubrics and scripted talkers.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::encounter::{EncounterSetup, Pacing};
use crate::patient::{load_scenario, ScenarioScript};
use crate::planner::{ClinicalProtocol, Planner};
use crate::scoring::CaseRubric;
use crate::session::{Arm, SessionConfig};
use crate::talker::{ScriptedBackend, TalkerScript};

pub struct DemoCase {
    pub id: &'static str,
    pub scenario: &'static str,
    pub protocol: &'static str,
    pub rubric: &'static str,
    pub human_talker: &'static str,
}

macro_rules! case {
    ($id:literal) => {
        DemoCase {
            id: $id,
            scenario: include_str!(concat!("../data/scenarios/", $id, ".json")),
            protocol: include_str!(concat!("../data/protocols/", $id, ".json")),
            rubric: include_str!(concat!("../data/rubrics/", $id, ".json")),
            human_talker: include_str!(concat!("../data/talkers/human_", $id, ".json")),
        }
    };
}

pub const CASES: [DemoCase; 3] = [
    case!("asthma"),
    case!("myasthenia_gravis"),
    case!("rotator_cuff"),
];

pub const GENERIC_TALKER: &str = include_str!("../data/talkers/generic.json");
pub const COMPARATOR_TALKER: &str = include_str!("../data/talkers/comparator.json");

pub fn case(id: &str) -> Option<&'static DemoCase> {
    CASES.iter().find(|c| c.id == id)
}

impl DemoCase {
    pub fn scenario(&self) -> ScenarioScript {
        load_scenario(self.scenario).expect("bundled scenario is valid")
    }

    pub fn protocol(&self) -> ClinicalProtocol {
        ClinicalProtocol::parse(self.protocol).expect("bundled protocol parses")
    }

    pub fn rubric(&self) -> CaseRubric {
        CaseRubric::parse(self.rubric).expect("bundled rubric is valid")
    }

    pub fn human_talker(&self) -> TalkerScript {
        TalkerScript::parse(self.human_talker).expect("bundled talker script parses")
    }
}

pub fn generic_talker() -> TalkerScript {
    TalkerScript::parse(GENERIC_TALKER).expect("bundled talker script parses")
}

pub fn comparator_talker() -> TalkerScript {
    TalkerScript::parse(COMPARATOR_TALKER).expect("bundled talker script parses")
}

/// Session budget for demo encounters, in milliseconds.
pub const DEMO_MAX_DURATION_MS: u64 = 15 * 60 * 1000;

/// Encounter wiring for one arm of a demo case: the planner arm and the
/// ablation arm share the generic talker, the comparator uses its own single
/// model script, and the human arm follows the case's clinician script.
pub fn setup(case: &DemoCase, arm: Arm, actor: &str) -> EncounterSetup {
    let script = Arc::new(case.scenario());
    let talker_script = match arm {
        Arm::Coclinician | Arm::CoclinicianNoPlanner => generic_talker(),
        Arm::ComparatorRealtime => comparator_talker(),
        Arm::Human => case.human_talker(),
    };
    let planner = (arm == Arm::Coclinician).then(|| {
        Arc::new(
            Planner::new(&script, case.protocol()).expect("bundled protocol matches its scenario"),
        )
    });
    EncounterSetup {
        config: SessionConfig::new(case.id, arm, DEMO_MAX_DURATION_MS).with_actor(actor),
        script,
        planner,
        persona: talker_script.persona.clone(),
        talker: Arc::new(ScriptedBackend::new(talker_script)),
        max_turns: 60,
        pacing: Pacing::default(),
        hesitant: BTreeSet::new(),
    }
}
