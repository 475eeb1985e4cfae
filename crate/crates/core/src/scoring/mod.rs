//! Case-specific rubrics, the trace autograder, manual score ingestion and
//! score aggregation.

mod autograde;
mod manual;
mod rubric;
mod sheet;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use autograde::{autograde, holds, matches};
pub use manual::{ingest_manual, parse_item_csv, parse_rating_csv, ItemRow, RatingRow};
pub use rubric::{CaseRubric, GradingRule, Matcher, Pred, RedFlagRule, RubricItem, RUBRIC_SCHEMA};
pub use sheet::{
    aggregate, likert_percent, read_score_rows, write_score_rows, EncounterScore, LikertMapping,
    ScoreRow, TOTAL_CATEGORY,
};

use crate::ids::{ActorId, EncounterId, ScenarioId};
use crate::session::Arm;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("trace is for scenario `{trace}` but the rubric is for `{rubric}`")]
    ScenarioMismatch {
        trace: ScenarioId,
        rubric: ScenarioId,
    },
    #[error("rubric does not parse: {0}")]
    RubricParse(String),
    #[error("invalid rubric: {}", .0.join("; "))]
    InvalidRubric(Vec<String>),
    #[error("unknown rubric item `{0}`")]
    UnknownItem(String),
    #[error("unknown universal criterion `{0}`")]
    UnknownCriterion(String),
    #[error("score {score} for `{item}` is outside {min}..={max}")]
    OutOfRange {
        item: String,
        score: i64,
        min: u8,
        max: u8,
    },
    #[error("`{0}` is scored more than once")]
    Duplicate(String),
    #[error("missing scores for: {}", .0.join(", "))]
    MissingItems(Vec<String>),
    #[error("malformed score CSV: {0}")]
    Csv(String),
}

/// The seven case-rubric domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    HistoryTaking,
    PhysicalExam,
    ClinicalReasoning,
    CommunicationCounseling,
    TreatmentSteps,
    Triage,
    RedFlags,
}

impl Domain {
    pub const ALL: [Domain; 7] = [
        Self::HistoryTaking,
        Self::PhysicalExam,
        Self::ClinicalReasoning,
        Self::CommunicationCounseling,
        Self::TreatmentSteps,
        Self::Triage,
        Self::RedFlags,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::HistoryTaking => "history_taking",
            Self::PhysicalExam => "physical_exam",
            Self::ClinicalReasoning => "clinical_reasoning",
            Self::CommunicationCounseling => "communication_counseling",
            Self::TreatmentSteps => "treatment_steps",
            Self::Triage => "triage",
            Self::RedFlags => "red_flags",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown domain `{s}`"))
    }
}

/// The fourteen universal criteria, each rated 1 to 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniversalCriterion {
    FamilyHistory,
    PastMedicalHistory,
    DifferentialDiagnosis,
    ExplainAccurately,
    ManagementPlan,
    SystemsReview,
    ConfirmUnderstanding,
    Empathy,
    ExplainProfessionally,
    PatientWelfare,
    ExplainComprehensively,
    ExplainWithStructure,
    ExplainClearly,
    AddressConcerns,
}

impl UniversalCriterion {
    pub const ALL: [UniversalCriterion; 14] = [
        Self::FamilyHistory,
        Self::PastMedicalHistory,
        Self::DifferentialDiagnosis,
        Self::ExplainAccurately,
        Self::ManagementPlan,
        Self::SystemsReview,
        Self::ConfirmUnderstanding,
        Self::Empathy,
        Self::ExplainProfessionally,
        Self::PatientWelfare,
        Self::ExplainComprehensively,
        Self::ExplainWithStructure,
        Self::ExplainClearly,
        Self::AddressConcerns,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FamilyHistory => "family_history",
            Self::PastMedicalHistory => "past_medical_history",
            Self::DifferentialDiagnosis => "differential_diagnosis",
            Self::ExplainAccurately => "explain_accurately",
            Self::ManagementPlan => "management_plan",
            Self::SystemsReview => "systems_review",
            Self::ConfirmUnderstanding => "confirm_understanding",
            Self::Empathy => "empathy",
            Self::ExplainProfessionally => "explain_professionally",
            Self::PatientWelfare => "patient_welfare",
            Self::ExplainComprehensively => "explain_comprehensively",
            Self::ExplainWithStructure => "explain_with_structure",
            Self::ExplainClearly => "explain_clearly",
            Self::AddressConcerns => "address_concerns",
        }
    }

    /// The question raters answer.
    pub fn question(self) -> &'static str {
        match self {
            Self::FamilyHistory => "To what extent did the doctor elicit the family history?",
            Self::PastMedicalHistory => "To what extent did the doctor elicit the past medical history?",
            Self::DifferentialDiagnosis => "To what extent did the doctor construct a sensible differential diagnosis?",
            Self::ExplainAccurately => "To what extent did the doctor explain relevant clinical information accurately?",
            Self::ManagementPlan => {
                "To what extent did the doctor select a comprehensive, sensible and appropriate management plan?"
            }
            Self::SystemsReview => "To what extent did the doctor elicit the systems review?",
            Self::ConfirmUnderstanding => {
                "To what extent did the doctor confirm the patient's knowledge and understanding?"
            }
            Self::Empathy => "How empathic was the doctor?",
            Self::ExplainProfessionally => {
                "To what extent did the doctor explain relevant clinical information professionally?"
            }
            Self::PatientWelfare => "To what extent did the doctor maintain the patient's welfare?",
            Self::ExplainComprehensively => {
                "To what extent did the doctor explain relevant clinical information comprehensively?"
            }
            Self::ExplainWithStructure => {
                "To what extent did the doctor explain relevant clinical information with structure?"
            }
            Self::ExplainClearly => "To what extent did the doctor explain relevant clinical information clearly?",
            Self::AddressConcerns => {
                "To what extent did the doctor seek, detect, acknowledge and attempt to address the patient's concerns?"
            }
        }
    }
}

impl fmt::Display for UniversalCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UniversalCriterion {
    type Err = ScoringError;

    fn from_str(s: &str) -> Result<Self, ScoringError> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| ScoringError::UnknownCriterion(s.to_owned()))
    }
}

/// Who produced a score sheet: `autograder` or `manual:<rater id>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Rater {
    Autograder,
    Manual(String),
}

impl fmt::Display for Rater {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Autograder => f.write_str("autograder"),
            Self::Manual(id) => write!(f, "manual:{id}"),
        }
    }
}

impl FromStr for Rater {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "autograder" => Ok(Self::Autograder),
            Some(("manual", id)) if !id.is_empty() => Ok(Self::Manual(id.to_owned())),
            _ => Err(format!(
                "rater must be `autograder` or `manual:<id>`, got `{s}`"
            )),
        }
    }
}

impl TryFrom<String> for Rater {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Rater> for String {
    fn from(r: Rater) -> Self {
        r.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encounter_id: Option<EncounterId>,
    pub scenario: ScenarioId,
    pub arm: Arm,
    pub actor: ActorId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSheet {
    pub encounter: EncounterRef,
    /// Item id to score in 0..=2.
    pub items: BTreeMap<String, u8>,
    /// Criterion to rating in 1..=5.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub universal: BTreeMap<UniversalCriterion, u8>,
    pub rater: Rater,
}

impl ScoreSheet {
    /// Checks the sheet is complete over `rubric` and every value in range.
    pub fn validate(&self, rubric: &CaseRubric) -> Result<(), ScoringError> {
        for (id, &score) in &self.items {
            if rubric.item(id).is_none() {
                return Err(ScoringError::UnknownItem(id.clone()));
            }
            if score > RubricItem::MAX_SCORE {
                return Err(ScoringError::OutOfRange {
                    item: id.clone(),
                    score: score.into(),
                    min: 0,
                    max: RubricItem::MAX_SCORE,
                });
            }
        }
        for (c, &r) in &self.universal {
            if !(1..=5).contains(&r) {
                return Err(ScoringError::OutOfRange {
                    item: c.to_string(),
                    score: r.into(),
                    min: 1,
                    max: 5,
                });
            }
        }
        let missing: Vec<String> = rubric
            .items()
            .filter(|i| !self.items.contains_key(&i.id))
            .map(|i| i.id.clone())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ScoringError::MissingItems(missing))
        }
    }
}
