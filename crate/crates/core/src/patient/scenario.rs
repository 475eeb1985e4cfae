//! Scenario scripts: the JSON case template a simulated patient plays from.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{FindingId, ManeuverId, ScenarioId};
use crate::pattern::{Pattern, Synonyms};

pub const SCENARIO_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disclosure {
    /// Offered unprompted on the first open-ended prompt, or when asked.
    Volunteered,
    /// Released only when a question matches one of the fact's probe patterns.
    OnSpecificRequest,
    /// Released only on the second turn that probes it.
    OnActiveProbe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fact {
    pub finding: FindingId,
    /// Short clinical label, e.g. "double vision".
    pub label: String,
    /// What the patient says when the fact is disclosed.
    pub value: String,
    pub disclosure: Disclosure,
    #[serde(default)]
    pub probe_patterns: Vec<Pattern>,
    /// Withhold this fact when it is one of several asked about at once.
    #[serde(default)]
    pub omit_on_compound: bool,
    /// False for pertinent negatives ("no fever").
    #[serde(default = "yes")]
    pub present: bool,
    /// Phrases in free patient speech that evidence this finding. The fact's
    /// own `value` always counts.
    #[serde(default)]
    pub evidence_patterns: Vec<Pattern>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Emergent,
    Urgent,
    Routine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub diagnosis: String,
    pub severity: Severity,
    /// Findings whose joint presence raises the diagnosis to a confirmed suspicion.
    #[serde(default)]
    pub key_findings: Vec<FindingId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alternative {
    pub diagnosis: String,
    /// Finding that, once evidenced, excludes this diagnosis.
    pub finding: FindingId,
    pub label: String,
    pub exclusion_probe_patterns: Vec<Pattern>,
    /// Patient's answer to an exclusion probe.
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedFlag {
    pub finding: FindingId,
    pub label: String,
    pub probe_patterns: Vec<Pattern>,
    pub present: bool,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Maneuver {
    pub id: ManeuverId,
    pub label: String,
    /// Phrases that mark an utterance as an attempt to direct this maneuver.
    pub cue_patterns: Vec<Pattern>,
    pub required_instruction_elements: Vec<Pattern>,
    /// Instructions the patient cannot physically follow over video.
    #[serde(default)]
    pub impossible_patterns: Vec<Pattern>,
    pub scripted_finding: FindingId,
    /// Description of the result when performed correctly.
    pub finding_description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_duration_s: Option<u32>,
    /// How long the patient holds a timed maneuver when no adequate duration is given.
    #[serde(default = "default_brief_hold")]
    pub brief_hold_s: u32,
    #[serde(default = "default_brief_reply")]
    pub brief_reply: String,
    #[serde(default = "default_clarification")]
    pub clarification: String,
    #[serde(default = "default_incorrect")]
    pub incorrect_reply: String,
}

fn default_brief_hold() -> u32 {
    5
}

fn default_brief_reply() -> String {
    "Okay, like this? I can put them down now.".to_owned()
}

fn default_clarification() -> String {
    "Sorry, I'm not sure what you want me to do.".to_owned()
}

fn default_incorrect() -> String {
    "I'm not sure how to do that over video.".to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnevokedSign {
    pub sign: FindingId,
    pub label: String,
    pub description: String,
    /// Half-open interval `[start_ms, end_ms)` of session time.
    pub active_window: [u64; 2],
}

impl UnevokedSign {
    pub fn active_at(&self, t: u64) -> bool {
        self.active_window[0] <= t && t < self.active_window[1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Escalation {
    pub threshold_findings: BTreeSet<FindingId>,
    pub required_disposition: String,
}

/// A question the patient raises once a trigger finding has come up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interjection {
    pub after: FindingId,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub schema: u32,
    pub id: ScenarioId,
    #[serde(default)]
    pub title: String,
    pub chief_concern: String,
    #[serde(default)]
    pub synonyms: Synonyms,
    /// Open-ended prompts ("what brings you in") that release volunteered facts.
    #[serde(default)]
    pub open_prompts: Vec<Pattern>,
    #[serde(default)]
    pub facts: Vec<Fact>,
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
    #[serde(default)]
    pub alternatives: Vec<Alternative>,
    #[serde(default)]
    pub red_flags: Vec<RedFlag>,
    #[serde(default)]
    pub maneuvers: Vec<Maneuver>,
    #[serde(default)]
    pub unevoked_signs: Vec<UnevokedSign>,
    #[serde(default)]
    pub escalation: Option<Escalation>,
    #[serde(default)]
    pub interjections: Vec<Interjection>,
    #[serde(default = "default_filler")]
    pub filler: String,
    #[serde(default = "default_farewell")]
    pub farewell: String,
}

fn default_filler() -> String {
    "Hmm, I'm not really sure.".to_owned()
}

fn default_farewell() -> String {
    "Thank you, goodbye.".to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("scenario is invalid: {}", list(.0))]
    Invalid(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl ScenarioError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            Self::Invalid(v) => v,
            Self::Parse(_) => &[],
        }
    }
}

/// What a finding id names within a script.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FindingSource<'a> {
    Fact(&'a Fact),
    RedFlag(&'a RedFlag),
    Alternative(&'a Alternative),
    Maneuver(&'a Maneuver),
    Sign(&'a UnevokedSign),
}

pub fn load_scenario(document: &str) -> Result<ScenarioScript, ScenarioError> {
    let script: ScenarioScript =
        serde_json::from_str(document).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let violations = script.violations();
    if violations.is_empty() {
        Ok(script)
    } else {
        Err(ScenarioError::Invalid(violations))
    }
}

impl ScenarioScript {
    pub fn ground_truth(&self) -> &GroundTruth {
        self.ground_truth
            .as_ref()
            .expect("validated scenario has a ground truth")
    }

    pub fn fact(&self, id: &FindingId) -> Option<&Fact> {
        self.facts.iter().find(|f| &f.finding == id)
    }

    pub fn maneuver(&self, id: &ManeuverId) -> Option<&Maneuver> {
        self.maneuvers.iter().find(|m| &m.id == id)
    }

    /// Every finding id the script defines, with where it is defined.
    pub fn findings(&self) -> Vec<(&FindingId, FindingSource<'_>)> {
        let mut out: Vec<(&FindingId, FindingSource<'_>)> = Vec::new();
        out.extend(
            self.facts
                .iter()
                .map(|f| (&f.finding, FindingSource::Fact(f))),
        );
        out.extend(
            self.red_flags
                .iter()
                .map(|f| (&f.finding, FindingSource::RedFlag(f))),
        );
        out.extend(
            self.alternatives
                .iter()
                .map(|a| (&a.finding, FindingSource::Alternative(a))),
        );
        out.extend(
            self.maneuvers
                .iter()
                .map(|m| (&m.scripted_finding, FindingSource::Maneuver(m))),
        );
        out.extend(
            self.unevoked_signs
                .iter()
                .map(|s| (&s.sign, FindingSource::Sign(s))),
        );
        out
    }

    pub fn label_of(&self, id: &FindingId) -> Option<&str> {
        self.findings()
            .into_iter()
            .find(|(f, _)| *f == id)
            .map(|(_, src)| match src {
                FindingSource::Fact(f) => f.label.as_str(),
                FindingSource::RedFlag(r) => r.label.as_str(),
                FindingSource::Alternative(a) => a.label.as_str(),
                FindingSource::Maneuver(m) => m.label.as_str(),
                FindingSource::Sign(s) => s.label.as_str(),
            })
    }

    /// Every invariant violation, in document order.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut push = |field: &str, message: String| {
            v.push(Violation {
                field: field.to_owned(),
                message,
            })
        };

        if self.schema != SCENARIO_SCHEMA {
            push(
                "schema",
                format!(
                    "unsupported schema {}, expected {SCENARIO_SCHEMA}",
                    self.schema
                ),
            );
        }
        if self.id.as_str().trim().is_empty() {
            push("id", "must not be empty".into());
        }
        if self.chief_concern.trim().is_empty() {
            push("chief_concern", "must not be empty".into());
        }
        match &self.ground_truth {
            None => push("ground_truth", "missing".into()),
            Some(gt) if gt.diagnosis.trim().is_empty() => {
                push("ground_truth.diagnosis", "must not be empty".into())
            }
            Some(_) => {}
        }
        if self.red_flags.is_empty() {
            push("red_flags", "at least one red flag is required".into());
        }
        if self.maneuvers.is_empty() {
            push("maneuvers", "at least one maneuver is required".into());
        }

        let mut seen = BTreeSet::new();
        for (id, _) in self.findings() {
            if id.as_str().trim().is_empty() {
                push("findings", "empty finding id".into());
            } else if !seen.insert(id.as_str()) {
                push("findings", format!("duplicate finding id `{id}`"));
            }
        }
        let mut maneuver_ids = BTreeSet::new();
        for m in &self.maneuvers {
            if !maneuver_ids.insert(m.id.as_str()) {
                push("maneuvers", format!("duplicate maneuver id `{}`", m.id));
            }
            if m.required_instruction_elements.is_empty() {
                push(
                    &format!("maneuvers.{}.required_instruction_elements", m.id),
                    "must not be empty".into(),
                );
            }
            if m.cue_patterns.is_empty() {
                push(
                    &format!("maneuvers.{}.cue_patterns", m.id),
                    "must not be empty".into(),
                );
            }
            if m.min_duration_s == Some(0) {
                push(
                    &format!("maneuvers.{}.min_duration_s", m.id),
                    "must be positive".into(),
                );
            }
        }
        for f in &self.facts {
            if f.disclosure != Disclosure::Volunteered && f.probe_patterns.is_empty() {
                push(
                    &format!("facts.{}.probe_patterns", f.finding),
                    "required unless the fact is volunteered".into(),
                );
            }
            if f.value.trim().is_empty() {
                push(
                    &format!("facts.{}.value", f.finding),
                    "must not be empty".into(),
                );
            }
        }
        for r in &self.red_flags {
            if r.probe_patterns.is_empty() {
                push(
                    &format!("red_flags.{}.probe_patterns", r.finding),
                    "must not be empty".into(),
                );
            }
        }
        for a in &self.alternatives {
            if a.exclusion_probe_patterns.is_empty() {
                push(
                    &format!("alternatives.{}.exclusion_probe_patterns", a.finding),
                    "must not be empty".into(),
                );
            }
        }
        for s in &self.unevoked_signs {
            let [start, end] = s.active_window;
            if start >= end {
                push(
                    &format!("unevoked_signs.{}.active_window", s.sign),
                    format!("start {start} must precede end {end}"),
                );
            }
        }
        if let Some(gt) = &self.ground_truth {
            for k in &gt.key_findings {
                if !seen.contains(k.as_str()) {
                    push(
                        "ground_truth.key_findings",
                        format!("unknown finding `{k}`"),
                    );
                }
            }
        }
        if let Some(esc) = &self.escalation {
            for k in &esc.threshold_findings {
                if !seen.contains(k.as_str()) {
                    push(
                        "escalation.threshold_findings",
                        format!("unknown finding `{k}`"),
                    );
                }
            }
        }
        for i in &self.interjections {
            if !seen.contains(i.after.as_str()) {
                push(
                    "interjections.after",
                    format!("unknown finding `{}`", i.after),
                );
            }
        }
        for group in self.patterns().flat_map(|p| p.groups()) {
            if !self.synonyms.contains(group) {
                push(
                    "synonyms",
                    format!("pattern references undeclared group `@{group}`"),
                );
            }
        }
        v.dedup();
        v
    }

    fn patterns(&self) -> impl Iterator<Item = &Pattern> {
        self.open_prompts
            .iter()
            .chain(
                self.facts
                    .iter()
                    .flat_map(|f| f.probe_patterns.iter().chain(&f.evidence_patterns)),
            )
            .chain(
                self.alternatives
                    .iter()
                    .flat_map(|a| &a.exclusion_probe_patterns),
            )
            .chain(self.red_flags.iter().flat_map(|r| &r.probe_patterns))
            .chain(self.maneuvers.iter().flat_map(|m| {
                m.cue_patterns
                    .iter()
                    .chain(&m.required_instruction_elements)
                    .chain(&m.impossible_patterns)
            }))
    }
}
