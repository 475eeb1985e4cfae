//! The planner's running model of an encounter and the pure operations on it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::goal::{Constraint, Directive, Goal, GoalKind, GoalStatus};
use super::PlannerError;
use crate::evidence::{Cite, SourceClass};
use crate::ids::{FindingId, GoalId};
use crate::session::{ManeuverMarker, ManeuverResult, Seq};

/// Hold time asked for when a timed step names none.
pub const DEFAULT_HOLD_S: u32 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatheredFinding {
    pub label: String,
    pub present: bool,
    pub source: SourceClass,
    /// Frame that evidences the finding.
    pub frame: Seq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferentialStatus {
    Active,
    Excluded,
    ConfirmedSuspicion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Differential {
    pub label: String,
    pub status: DifferentialStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterModel {
    pub gathered_findings: BTreeMap<FindingId, GatheredFinding>,
    pub differentials: Vec<Differential>,
    pub goals: Vec<Goal>,
    pub turn_count: u32,
    /// Seq of the next frame to ingest.
    pub next_seq: Seq,
    /// Indices of protocol rules that have already fired.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub fired_rules: BTreeSet<usize>,
}

impl EncounterModel {
    pub fn goal(&self, id: &str) -> Option<&Goal> {
        self.goals.iter().find(|g| g.id.as_str() == id)
    }

    pub fn is_evidenced(&self, finding: &FindingId) -> bool {
        self.gathered_findings.contains_key(finding)
    }

    pub fn open_goals(&self) -> impl Iterator<Item = &Goal> {
        self.goals.iter().filter(|g| g.status.is_open())
    }
}

/// Adds `goal` as pending at the current turn.
pub fn inject_goal(model: &EncounterModel, goal: Goal) -> Result<EncounterModel, PlannerError> {
    let mut next = model.clone();
    inject_in_place(&mut next, goal)?;
    Ok(next)
}

pub(crate) fn inject_in_place(
    model: &mut EncounterModel,
    mut goal: Goal,
) -> Result<(), PlannerError> {
    if model.goals.iter().any(|g| g.id == goal.id) {
        return Err(PlannerError::DuplicateGoal(goal.id));
    }
    if let Some(c) = goal.constraint {
        if c.min_duration_s == 0 {
            return Err(PlannerError::InvalidConstraint(goal.id));
        }
    }
    goal.status = GoalStatus::Pending;
    goal.injected_at_turn = model.turn_count;
    model.goals.push(goal);
    Ok(())
}

/// Satisfied exactly when every required slot is evidenced. Satisfied and
/// abandoned are terminal.
pub fn resolve_goal_status(goal: &Goal, model: &EncounterModel) -> GoalStatus {
    match goal.status {
        GoalStatus::Satisfied | GoalStatus::Abandoned => goal.status,
        _ if goal.required_slots.iter().all(|s| model.is_evidenced(s)) => GoalStatus::Satisfied,
        open => open,
    }
}

/// Index of the first procedure step whose slot is still missing.
pub fn current_step(goal: &Goal, model: &EncounterModel) -> Option<usize> {
    goal.steps.iter().position(|s| !model.is_evidenced(&s.slot))
}

/// Reacts to a maneuver that fell short: an early release adds a hold-time
/// constraint to the step, a confused or impossible attempt switches the step
/// to its clarified wording. Never marks anything satisfied.
pub fn course_correct(goal: &Goal, marker: &ManeuverMarker) -> Result<Goal, PlannerError> {
    if goal.kind != GoalKind::GuideExamManeuver {
        return Err(PlannerError::NotAManeuverGoal(goal.id.clone(), goal.kind));
    }
    let mut next = goal.clone();
    let Some(step) = goal
        .steps
        .iter()
        .position(|s| s.maneuver.as_ref() == Some(&marker.maneuver))
    else {
        return Ok(next);
    };
    let hold = goal.steps[step].hold_s.unwrap_or(DEFAULT_HOLD_S);
    match marker.result {
        // Performed adequately: nothing to correct.
        ManeuverResult::Finding => return Ok(next),
        ManeuverResult::Brief => {
            let need = next.constraint.map_or(hold, |c| c.min_duration_s.max(hold));
            next.constraint = Some(Constraint {
                min_duration_s: need,
            });
            next.corrected_steps.insert(step);
        }
        ManeuverResult::Clarification | ManeuverResult::Incorrect => {
            next.clarified_steps.insert(step);
        }
    }
    if next.status == GoalStatus::Pending {
        next.status = GoalStatus::Active;
    }
    Ok(next)
}

/// Text the talker should say for `goal` given what is known so far.
pub fn render_instruction(goal: &Goal, model: &EncounterModel) -> (String, Vec<Cite>) {
    let mut cites = Vec::new();
    let mut parts = Vec::new();
    if goal.summary {
        let present: Vec<_> = model
            .gathered_findings
            .iter()
            .filter(|(_, g)| g.present)
            .collect();
        if !present.is_empty() {
            let labels: Vec<&str> = present.iter().map(|(_, g)| g.label.as_str()).collect();
            parts.push(format!(
                "To summarize what we have found: {}.",
                join_labels(&labels)
            ));
            cites.extend(
                present
                    .iter()
                    .map(|(f, g)| Cite::supported((*f).clone(), g.source, g.frame)),
            );
        }
    }
    let body = if let Some(idx) = current_step(goal, model) {
        let step = &goal.steps[idx];
        let mut text = match (
            &step.clarified_instruction,
            goal.clarified_steps.contains(&idx),
        ) {
            (Some(clarified), true) => clarified.clone(),
            _ => step.instruction.clone(),
        };
        if goal.corrected_steps.contains(&idx) {
            let need = goal.constraint.map_or(DEFAULT_HOLD_S, |c| c.min_duration_s);
            text.push_str(&format!(
                " Please keep holding that position for {need} seconds while I watch."
            ));
        }
        text
    } else {
        let any_evidenced = goal.required_slots.iter().any(|s| model.is_evidenced(s));
        let follow_up = goal
            .required_slots
            .iter()
            .filter(|s| !model.is_evidenced(s))
            .find_map(|s| goal.slot_prompts.get(s));
        match follow_up {
            Some(prompt) if any_evidenced => prompt.clone(),
            _ => goal.instruction.clone(),
        }
    };
    parts.push(body);
    (parts.join(" "), cites)
}

fn join_labels(labels: &[&str]) -> String {
    match labels {
        [] => String::new(),
        [one] => (*one).to_owned(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Open goals in directing order: priority, then injection turn, then
/// injection order. Stalled goals and goals waiting on unsettled
/// prerequisites are left out; each goal yields at most one directive.
///
/// A prerequisite that has not been injected yet counts as unsettled, unless
/// that would leave nothing to direct at all.
pub fn plan_directives(model: &EncounterModel) -> Vec<Directive> {
    let strict = ready_goals(model, false);
    let ready = if strict.is_empty() {
        ready_goals(model, true)
    } else {
        strict
    };
    ready
        .into_iter()
        .map(|g| {
            let (instruction, cites) = render_instruction(g, model);
            Directive {
                goal_id: g.id.clone(),
                kind: g.kind,
                instruction,
                priority: g.priority,
                injected_at_turn: g.injected_at_turn,
                cites,
            }
        })
        .collect()
}

fn ready_goals(model: &EncounterModel, missing_is_settled: bool) -> Vec<&Goal> {
    let settled = |id: &GoalId| match model.goals.iter().find(|g| &g.id == id) {
        Some(g) => !g.status.is_open() || g.is_stalled(),
        None => missing_is_settled,
    };
    let mut ready: Vec<(usize, &Goal)> = model
        .goals
        .iter()
        .enumerate()
        .filter(|(_, g)| g.status.is_open() && !g.is_stalled() && g.after.iter().all(settled))
        .collect();
    ready.sort_by_key(|(i, g)| (g.priority, g.injected_at_turn, *i));
    ready.into_iter().map(|(_, g)| g).collect()
}
