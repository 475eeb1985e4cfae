//! Goals, goal templates and the directives derived from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::evidence::Cite;
use crate::ids::{FindingId, GoalId, ManeuverId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    ElicitHistory,
    VisualInspection,
    GuideExamManeuver,
    EducateUser,
    ScreenRedFlag,
    TriageDecision,
    TreatmentCounsel,
}

impl GoalKind {
    pub const ALL: [GoalKind; 7] = [
        Self::ElicitHistory,
        Self::VisualInspection,
        Self::GuideExamManeuver,
        Self::EducateUser,
        Self::ScreenRedFlag,
        Self::TriageDecision,
        Self::TreatmentCounsel,
    ];

    /// Lower is more urgent. Safety screening outranks everything.
    pub fn default_priority(self) -> u32 {
        match self {
            Self::ScreenRedFlag => 0,
            Self::TriageDecision => 1,
            Self::GuideExamManeuver | Self::VisualInspection => 2,
            Self::ElicitHistory => 3,
            Self::EducateUser => 4,
            Self::TreatmentCounsel => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ElicitHistory => "elicit_history",
            Self::VisualInspection => "visual_inspection",
            Self::GuideExamManeuver => "guide_exam_maneuver",
            Self::EducateUser => "educate_user",
            Self::ScreenRedFlag => "screen_red_flag",
            Self::TriageDecision => "triage_decision",
            Self::TreatmentCounsel => "treatment_counsel",
        }
    }
}

impl fmt::Display for GoalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalStatus {
    Pending,
    Active,
    Satisfied,
    Abandoned,
}

impl GoalStatus {
    pub fn is_open(self) -> bool {
        matches!(self, Self::Pending | Self::Active)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraint {
    pub min_duration_s: u32,
}

/// One instruction of a multi-step procedure, complete once its slot is evidenced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcedureStep {
    pub instruction: String,
    pub slot: FindingId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maneuver: Option<ManeuverId>,
    /// Hold time to insist on if the patient releases the position too early.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_s: Option<u32>,
    /// Rephrasing to use after the patient was confused by `instruction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clarified_instruction: Option<String>,
}

fn default_attempts() -> u32 {
    3
}

/// Protocol-side description of a goal, instantiated on injection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalTemplate {
    pub id: GoalId,
    pub kind: GoalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u32>,
    pub instruction: String,
    #[serde(default)]
    pub required_slots: Vec<FindingId>,
    /// Follow-up wording for a slot still missing after the first ask.
    #[serde(default)]
    pub slot_prompts: BTreeMap<FindingId, String>,
    #[serde(default)]
    pub steps: Vec<ProcedureStep>,
    /// Goals that must be settled before this one is directed.
    #[serde(default)]
    pub after: Vec<GoalId>,
    /// Prefix the instruction with a recap of gathered findings.
    #[serde(default)]
    pub summary: bool,
    /// Directives without progress before the goal is set aside.
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
}

impl GoalTemplate {
    pub fn all_slots(&self) -> BTreeSet<FindingId> {
        self.required_slots
            .iter()
            .chain(self.steps.iter().map(|s| &s.slot))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub id: GoalId,
    pub kind: GoalKind,
    pub status: GoalStatus,
    pub required_slots: BTreeSet<FindingId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<Constraint>,
    pub priority: u32,
    pub injected_at_turn: u32,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub slot_prompts: BTreeMap<FindingId, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<ProcedureStep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub after: Vec<GoalId>,
    #[serde(default)]
    pub summary: bool,
    pub max_attempts: u32,
    /// Directives issued since the goal last gained evidence.
    #[serde(default)]
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub corrected_steps: BTreeSet<usize>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub clarified_steps: BTreeSet<usize>,
}

impl Goal {
    /// A bare goal with the kind's default priority, for direct construction.
    pub fn new(id: impl Into<GoalId>, kind: GoalKind, instruction: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            status: GoalStatus::Pending,
            required_slots: BTreeSet::new(),
            constraint: None,
            priority: kind.default_priority(),
            injected_at_turn: 0,
            instruction: instruction.into(),
            slot_prompts: BTreeMap::new(),
            steps: Vec::new(),
            after: Vec::new(),
            summary: false,
            max_attempts: default_attempts(),
            attempts: 0,
            corrected_steps: BTreeSet::new(),
            clarified_steps: BTreeSet::new(),
        }
    }

    pub fn with_slots<I, F>(mut self, slots: I) -> Self
    where
        I: IntoIterator<Item = F>,
        F: Into<FindingId>,
    {
        self.required_slots = slots.into_iter().map(Into::into).collect();
        self
    }

    pub fn from_template(t: &GoalTemplate) -> Self {
        Self {
            id: t.id.clone(),
            kind: t.kind,
            status: GoalStatus::Pending,
            required_slots: t.all_slots(),
            constraint: None,
            priority: t.priority.unwrap_or_else(|| t.kind.default_priority()),
            injected_at_turn: 0,
            instruction: t.instruction.clone(),
            slot_prompts: t.slot_prompts.clone(),
            steps: t.steps.clone(),
            after: t.after.clone(),
            summary: t.summary,
            max_attempts: t.max_attempts.max(1),
            attempts: 0,
            corrected_steps: BTreeSet::new(),
            clarified_steps: BTreeSet::new(),
        }
    }

    /// Set aside after too many directives without progress. Stalled goals
    /// stay open but are no longer directed.
    pub fn is_stalled(&self) -> bool {
        self.attempts >= self.max_attempts
    }
}

/// Guidance for the talker, realized at its next turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Directive {
    pub goal_id: GoalId,
    pub kind: GoalKind,
    pub instruction: String,
    pub priority: u32,
    pub injected_at_turn: u32,
    /// Evidence behind findings the instruction mentions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cites: Vec<Cite>,
}
