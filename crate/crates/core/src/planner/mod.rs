//! The clinical planner: a supervisory agent that reads the session log,
//! keeps a model of the encounter (gathered findings, differentials, goals)
//! and issues prioritized directives for the talker.
//!
//! Domain knowledge comes from two files per scenario: the scenario script
//! (whose phrase tables say which utterances evidence which findings) and a
//! clinical protocol listing the initial goals and the rules that inject
//! further goals as findings come in.

mod goal;
mod model;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use goal::{Constraint, Directive, Goal, GoalKind, GoalStatus, GoalTemplate, ProcedureStep};
pub use model::{
    course_correct, current_step, inject_goal, plan_directives, render_instruction,
    resolve_goal_status, Differential, DifferentialStatus, EncounterModel, GatheredFinding,
    DEFAULT_HOLD_S,
};

use crate::evidence::SourceClass;
use crate::ids::{FindingId, GoalId, ScenarioId};
use crate::patient::ScenarioScript;
use crate::pattern::{any_matches, Pattern, Synonyms, Words};
use crate::session::{ControlAction, EventFrame, FrameBody, GoalTransition, ManeuverResult, Seq};

pub const PROTOCOL_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlannerError {
    #[error("duplicate goal id `{0}`")]
    DuplicateGoal(GoalId),
    #[error("goal `{0}` has a zero-length duration constraint")]
    InvalidConstraint(GoalId),
    #[error("course correction applies to guide_exam_maneuver goals, `{0}` is {1}")]
    NotAManeuverGoal(GoalId, GoalKind),
    #[error("non-contiguous frame delta: expected seq {expected}, got {found}")]
    NonContiguous { expected: Seq, found: Seq },
    #[error("protocol does not parse: {0}")]
    ProtocolParse(String),
    #[error("protocol is invalid: {}", .0.join("; "))]
    InvalidProtocol(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Trigger {
    /// A finding is gathered as present.
    FindingPresent(FindingId),
    /// A patient utterance matches the pattern.
    PatientSays(Pattern),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub when: Trigger,
    pub inject: GoalTemplate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalProtocol {
    pub schema: u32,
    pub scenario: ScenarioId,
    #[serde(default)]
    pub initial_goals: Vec<GoalTemplate>,
    #[serde(default)]
    pub rules: Vec<Rule>,
}

impl ClinicalProtocol {
    pub fn parse(document: &str) -> Result<Self, PlannerError> {
        serde_json::from_str(document).map_err(|e| PlannerError::ProtocolParse(e.to_string()))
    }

    fn templates(&self) -> impl Iterator<Item = &GoalTemplate> {
        self.initial_goals
            .iter()
            .chain(self.rules.iter().map(|r| &r.inject))
    }
}

#[derive(Debug, Clone)]
struct LexEntry {
    finding: FindingId,
    present: bool,
    patterns: Vec<Pattern>,
}

/// Maps free patient speech to findings using the phrase tables a scenario
/// script ships.
#[derive(Debug, Clone, Default)]
pub struct FindingLexicon {
    entries: Vec<LexEntry>,
    synonyms: Synonyms,
}

impl FindingLexicon {
    pub fn from_script(script: &ScenarioScript) -> Self {
        let literal = |text: &str| Pattern::literal(text).ok();
        let mut entries = Vec::new();
        for f in &script.facts {
            let mut patterns: Vec<Pattern> = literal(&f.value).into_iter().collect();
            patterns.extend(f.evidence_patterns.iter().cloned());
            entries.push(LexEntry {
                finding: f.finding.clone(),
                present: f.present,
                patterns,
            });
        }
        for r in &script.red_flags {
            entries.push(LexEntry {
                finding: r.finding.clone(),
                present: r.present,
                patterns: literal(&r.value).into_iter().collect(),
            });
        }
        for a in &script.alternatives {
            entries.push(LexEntry {
                finding: a.finding.clone(),
                present: false,
                patterns: literal(&a.value).into_iter().collect(),
            });
        }
        Self {
            entries,
            synonyms: script.synonyms.clone(),
        }
    }

    /// Findings evidenced by `text`, with whether each is present.
    pub fn extract(&self, text: &str) -> Vec<(FindingId, bool)> {
        let words = Words::new(text);
        self.entries
            .iter()
            .filter(|e| any_matches(&e.patterns, &words, &self.synonyms))
            .map(|e| (e.finding.clone(), e.present))
            .collect()
    }
}

#[derive(Debug, Clone)]
struct DifferentialRule {
    label: String,
    exclude_on: Vec<FindingId>,
    confirm_on: Vec<FindingId>,
}

/// Scenario-specific planner knowledge. Immutable and shareable; all
/// per-encounter state lives in [`EncounterModel`].
#[derive(Debug, Clone)]
pub struct Planner {
    protocol: ClinicalProtocol,
    lexicon: FindingLexicon,
    differentials: Vec<DifferentialRule>,
    labels: BTreeMap<FindingId, String>,
}

impl Planner {
    pub fn new(script: &ScenarioScript, protocol: ClinicalProtocol) -> Result<Self, PlannerError> {
        let labels: BTreeMap<FindingId, String> = script
            .findings()
            .into_iter()
            .map(|(id, _)| {
                (
                    id.clone(),
                    script.label_of(id).unwrap_or(id.as_str()).to_owned(),
                )
            })
            .collect();
        validate_protocol(&protocol, script, &labels)?;
        let mut differentials = vec![DifferentialRule {
            label: script.ground_truth().diagnosis.clone(),
            exclude_on: Vec::new(),
            confirm_on: script.ground_truth().key_findings.clone(),
        }];
        differentials.extend(script.alternatives.iter().map(|a| DifferentialRule {
            label: a.diagnosis.clone(),
            exclude_on: vec![a.finding.clone()],
            confirm_on: Vec::new(),
        }));
        // Alphabetical, so list order reveals nothing about the script.
        differentials.sort_by(|a, b| a.label.cmp(&b.label));
        Ok(Self {
            protocol,
            lexicon: FindingLexicon::from_script(script),
            differentials,
            labels,
        })
    }

    pub fn protocol(&self) -> &ClinicalProtocol {
        &self.protocol
    }

    /// Empty model holding the protocol's initial goals.
    pub fn initial_model(&self) -> EncounterModel {
        let mut m = EncounterModel::default();
        for t in &self.protocol.initial_goals {
            // Ids were checked unique by validation.
            let _ = model::inject_in_place(&mut m, Goal::from_template(t));
        }
        m
    }

    /// Folds `frames`, which must continue exactly where the model left off.
    pub fn ingest_delta(
        &self,
        model: &EncounterModel,
        frames: &[EventFrame],
    ) -> Result<EncounterModel, PlannerError> {
        let mut m = model.clone();
        for frame in frames {
            self.ingest_frame(&mut m, frame)?;
        }
        Ok(m)
    }

    fn ingest_frame(&self, m: &mut EncounterModel, frame: &EventFrame) -> Result<(), PlannerError> {
        if frame.seq != m.next_seq {
            return Err(PlannerError::NonContiguous {
                expected: m.next_seq,
                found: frame.seq,
            });
        }
        m.next_seq += 1;
        let evidenced_before: Vec<usize> = m.goals.iter().map(|g| evidenced(g, m)).collect();
        let seq = frame.seq;

        match &frame.body {
            FrameBody::PatientUtterance(u) => {
                for r in &u.findings {
                    self.record(m, &r.finding, r.present, SourceClass::PatientReported, seq);
                }
                for (finding, present) in self.lexicon.extract(&u.text) {
                    self.record(m, &finding, present, SourceClass::PatientReported, seq);
                }
                if m.differentials.is_empty() {
                    m.differentials = self
                        .differentials
                        .iter()
                        .map(|d| Differential {
                            label: d.label.clone(),
                            status: DifferentialStatus::Active,
                        })
                        .collect();
                }
                let words = Words::new(&u.text);
                for (i, rule) in self.protocol.rules.iter().enumerate() {
                    if let Trigger::PatientSays(p) = &rule.when {
                        if !m.fired_rules.contains(&i) && p.matches(&words, &self.lexicon.synonyms)
                        {
                            self.fire(m, i)?;
                        }
                    }
                }
            }
            FrameBody::FrameObservation(o) => {
                for s in &o.signs {
                    self.record(m, &s.sign, true, SourceClass::Observed, seq);
                }
            }
            FrameBody::ManeuverMarker(marker) => {
                if let Some(f) = &marker.finding {
                    self.record(m, f, true, SourceClass::Observed, seq);
                }
                if marker.result != ManeuverResult::Finding {
                    for i in 0..m.goals.len() {
                        let g = &m.goals[i];
                        let targets = g.kind == GoalKind::GuideExamManeuver
                            && g.status.is_open()
                            && current_step(g, m).is_some_and(|s| {
                                g.steps[s].maneuver.as_ref() == Some(&marker.maneuver)
                            });
                        if targets {
                            m.goals[i] = course_correct(&m.goals[i], marker)?;
                        }
                    }
                }
            }
            FrameBody::DirectiveInjected(d) => {
                if let Some(g) = m.goals.iter_mut().find(|g| g.id == d.goal_id) {
                    if g.status == GoalStatus::Pending {
                        g.status = GoalStatus::Active;
                    }
                    g.attempts += 1;
                }
            }
            FrameBody::SessionControl(c)
                if matches!(
                    c.action,
                    ControlAction::PatientDone | ControlAction::TalkerDone
                ) =>
            {
                m.turn_count += 1;
            }
            _ => {}
        }

        for i in 0..self.protocol.rules.len() {
            if let Trigger::FindingPresent(f) = &self.protocol.rules[i].when {
                let present = m.gathered_findings.get(f).is_some_and(|g| g.present);
                if present && !m.fired_rules.contains(&i) {
                    self.fire(m, i)?;
                }
            }
        }
        for i in 0..m.goals.len() {
            if evidenced_before
                .get(i)
                .is_some_and(|before| evidenced(&m.goals[i], m) > *before)
            {
                m.goals[i].attempts = 0;
            }
            m.goals[i].status = resolve_goal_status(&m.goals[i], m);
        }
        for (d, rule) in m.differentials.iter_mut().zip(&self.differentials) {
            if rule
                .exclude_on
                .iter()
                .any(|f| m.gathered_findings.contains_key(f))
            {
                d.status = DifferentialStatus::Excluded;
            } else if !rule.confirm_on.is_empty()
                && rule
                    .confirm_on
                    .iter()
                    .all(|f| m.gathered_findings.get(f).is_some_and(|g| g.present))
            {
                d.status = DifferentialStatus::ConfirmedSuspicion;
            }
        }
        Ok(())
    }

    fn record(
        &self,
        m: &mut EncounterModel,
        finding: &FindingId,
        present: bool,
        source: SourceClass,
        seq: Seq,
    ) {
        m.gathered_findings
            .entry(finding.clone())
            .or_insert_with(|| GatheredFinding {
                label: self
                    .labels
                    .get(finding)
                    .cloned()
                    .unwrap_or_else(|| finding.to_string()),
                present,
                source,
                frame: seq,
            });
    }

    fn fire(&self, m: &mut EncounterModel, rule: usize) -> Result<(), PlannerError> {
        m.fired_rules.insert(rule);
        let template = &self.protocol.rules[rule].inject;
        if m.goals.iter().any(|g| g.id == template.id) {
            return Ok(());
        }
        model::inject_in_place(m, Goal::from_template(template))
    }
}

fn evidenced(goal: &Goal, m: &EncounterModel) -> usize {
    goal.required_slots
        .iter()
        .filter(|s| m.is_evidenced(s))
        .count()
}

fn validate_protocol(
    protocol: &ClinicalProtocol,
    script: &ScenarioScript,
    labels: &BTreeMap<FindingId, String>,
) -> Result<(), PlannerError> {
    let mut problems = Vec::new();
    if protocol.schema != PROTOCOL_SCHEMA {
        problems.push(format!("unsupported schema {}", protocol.schema));
    }
    if protocol.scenario != script.id {
        problems.push(format!(
            "protocol is for `{}`, script is `{}`",
            protocol.scenario, script.id
        ));
    }
    let mut ids = BTreeSet::new();
    for t in protocol.templates() {
        if !ids.insert(t.id.clone()) {
            problems.push(format!("duplicate goal id `{}`", t.id));
        }
        for slot in t.all_slots() {
            if !labels.contains_key(&slot) {
                problems.push(format!("goal `{}` requires unknown finding `{slot}`", t.id));
            }
        }
        for step in &t.steps {
            if let Some(m) = &step.maneuver {
                if script.maneuver(m).is_none() {
                    problems.push(format!("goal `{}` names unknown maneuver `{m}`", t.id));
                }
            }
            if step.hold_s == Some(0) {
                problems.push(format!("goal `{}` has a zero hold time", t.id));
            }
        }
    }
    for t in protocol.templates() {
        for a in &t.after {
            if !ids.contains(a) {
                problems.push(format!("goal `{}` waits on unknown goal `{a}`", t.id));
            }
        }
    }
    for r in &protocol.rules {
        if let Trigger::FindingPresent(f) = &r.when {
            if !labels.contains_key(f) {
                problems.push(format!(
                    "rule for goal `{}` triggers on unknown finding `{f}`",
                    r.inject.id
                ));
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(PlannerError::InvalidProtocol(problems))
    }
}

/// Goal status changes between two models, as frames for the session log.
pub fn goal_transitions(before: &EncounterModel, after: &EncounterModel) -> Vec<GoalTransition> {
    after
        .goals
        .iter()
        .filter_map(|g| {
            let from = before.goals.iter().find(|b| b.id == g.id).map(|b| b.status);
            (from != Some(g.status)).then(|| GoalTransition {
                goal: g.id.clone(),
                kind: g.kind,
                from,
                to: g.status,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalView {
    pub id: GoalId,
    pub kind: GoalKind,
    pub status: GoalStatus,
    pub priority: u32,
    pub injected_at_turn: u32,
    pub required_slots: Vec<FindingId>,
    pub evidenced_slots: Vec<FindingId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<Constraint>,
    pub stalled: bool,
}

/// Per-turn export of the planner state for inspection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerSnapshot {
    pub turn: u32,
    /// Frames ingested so far.
    pub ingested: Seq,
    pub gathered_findings: BTreeMap<FindingId, GatheredFinding>,
    pub differentials: Vec<Differential>,
    pub goals: Vec<GoalView>,
    pub directives: Vec<Directive>,
}

impl PlannerSnapshot {
    pub fn of(model: &EncounterModel) -> Self {
        Self {
            turn: model.turn_count,
            ingested: model.next_seq,
            gathered_findings: model.gathered_findings.clone(),
            differentials: model.differentials.clone(),
            goals: model
                .goals
                .iter()
                .map(|g| GoalView {
                    id: g.id.clone(),
                    kind: g.kind,
                    status: g.status,
                    priority: g.priority,
                    injected_at_turn: g.injected_at_turn,
                    required_slots: g.required_slots.iter().cloned().collect(),
                    evidenced_slots: g
                        .required_slots
                        .iter()
                        .filter(|s| model.is_evidenced(s))
                        .cloned()
                        .collect(),
                    constraint: g.constraint,
                    stalled: g.is_stalled(),
                })
                .collect(),
            directives: plan_directives(model),
        }
    }
}

/// A planner attached to one session: owns the model and tracks how much
/// of the log it has read.
#[derive(Debug, Clone)]
pub struct PlannerAgent {
    planner: Arc<Planner>,
    model: EncounterModel,
    /// Goal statuses as of the last report; starts empty so the initial
    /// goals are reported as injected.
    reported: Vec<Goal>,
    snapshots: Vec<PlannerSnapshot>,
}

impl PlannerAgent {
    pub fn new(planner: Arc<Planner>) -> Self {
        let model = planner.initial_model();
        Self {
            planner,
            model,
            reported: Vec::new(),
            snapshots: Vec::new(),
        }
    }

    pub fn model(&self) -> &EncounterModel {
        &self.model
    }

    /// Ingests the unread suffix of `log` and returns the goal transitions it caused.
    pub fn observe(&mut self, log: &[EventFrame]) -> Result<Vec<GoalTransition>, PlannerError> {
        let start = (self.model.next_seq as usize).min(log.len());
        self.model = self.planner.ingest_delta(&self.model, &log[start..])?;
        let before = EncounterModel {
            goals: std::mem::take(&mut self.reported),
            ..EncounterModel::default()
        };
        let changes = goal_transitions(&before, &self.model);
        self.reported = self.model.goals.clone();
        Ok(changes)
    }

    /// The directive to hand the talker at this turn boundary, if any.
    pub fn next_directive(&self) -> Option<Directive> {
        plan_directives(&self.model).into_iter().next()
    }

    pub fn take_snapshot(&mut self) -> &PlannerSnapshot {
        self.snapshots.push(PlannerSnapshot::of(&self.model));
        self.snapshots.last().expect("just pushed")
    }

    pub fn snapshots(&self) -> &[PlannerSnapshot] {
        &self.snapshots
    }
}
