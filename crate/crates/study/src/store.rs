//! Scenario store: each case's patient script, planner protocol, rubric and
//! clinician script, plus the talker scripts shared across cases.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use telesim_core::demo;
use telesim_core::patient::{load_scenario, ScenarioScript};
use telesim_core::planner::{ClinicalProtocol, Planner};
use telesim_core::scoring::CaseRubric;
use telesim_core::talker::TalkerScript;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("unknown scenario `{0}`")]
    Unknown(String),
}

pub struct StoredCase {
    pub script: Arc<ScenarioScript>,
    pub planner: Arc<Planner>,
    pub rubric: CaseRubric,
    /// Clinician script standing in for the human arm in batch runs.
    pub human_talker: TalkerScript,
}

pub struct ScenarioStore {
    cases: BTreeMap<String, StoredCase>,
    pub generic_talker: TalkerScript,
    pub comparator_talker: TalkerScript,
}

impl ScenarioStore {
    /// The bundled demonstration cases.
    pub fn demo() -> Self {
        let cases = demo::CASES
            .iter()
            .map(|c| {
                let script = Arc::new(c.scenario());
                let planner = Arc::new(
                    Planner::new(&script, c.protocol()).expect("bundled protocol matches"),
                );
                let case = StoredCase {
                    script,
                    planner,
                    rubric: c.rubric(),
                    human_talker: c.human_talker(),
                };
                (c.id.to_owned(), case)
            })
            .collect();
        Self {
            cases,
            generic_talker: demo::generic_talker(),
            comparator_talker: demo::comparator_talker(),
        }
    }

    /// Adds every case under `dir`, laid out as `scenarios/<id>.json`,
    /// `protocols/<id>.json`, `rubrics/<id>.json` and
    /// `talkers/human_<id>.json`. Cases replace bundled ones with the same id.
    pub fn add_dir(&mut self, dir: &Path) -> Result<Vec<String>, StoreError> {
        let scenario_dir = dir.join("scenarios");
        let entries = fs::read_dir(&scenario_dir).map_err(|source| StoreError::Io {
            path: scenario_dir.clone(),
            source,
        })?;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".json").map(str::to_owned)
            })
            .collect();
        ids.sort();
        for id in &ids {
            let scenario_path = scenario_dir.join(format!("{id}.json"));
            let script =
                load_scenario(&read(&scenario_path)?).map_err(|e| invalid(&scenario_path, e))?;
            let protocol_path = dir.join("protocols").join(format!("{id}.json"));
            let protocol = ClinicalProtocol::parse(&read(&protocol_path)?)
                .map_err(|e| invalid(&protocol_path, e))?;
            let planner =
                Planner::new(&script, protocol).map_err(|e| invalid(&protocol_path, e))?;
            let rubric_path = dir.join("rubrics").join(format!("{id}.json"));
            let rubric =
                CaseRubric::parse(&read(&rubric_path)?).map_err(|e| invalid(&rubric_path, e))?;
            let talker_path = dir.join("talkers").join(format!("human_{id}.json"));
            let human_talker =
                TalkerScript::parse(&read(&talker_path)?).map_err(|e| invalid(&talker_path, e))?;
            self.cases.insert(
                id.clone(),
                StoredCase {
                    script: Arc::new(script),
                    planner: Arc::new(planner),
                    rubric,
                    human_talker,
                },
            );
        }
        Ok(ids)
    }

    pub fn case(&self, id: &str) -> Result<&StoredCase, StoreError> {
        self.cases
            .get(id)
            .ok_or_else(|| StoreError::Unknown(id.to_owned()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.cases.keys().map(String::as_str)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.cases.contains_key(id)
    }
}

fn read(path: &Path) -> Result<String, StoreError> {
    fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_owned(),
        source,
    })
}

fn invalid(path: &Path, e: impl ToString) -> StoreError {
    StoreError::Invalid {
        path: path.to_owned(),
        message: e.to_string(),
    }
}
