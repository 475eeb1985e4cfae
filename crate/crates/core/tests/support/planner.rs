//! Planner fixtures driven turn by turn against the bundled scenarios:
//! goal injection, multi-step exams, context switches, slot retention and
//! course correction. Each fixture panics on failure.

use std::sync::Arc;

use telesim_core::demo;
use telesim_core::patient::{PatientSim, PatientTurn};
use telesim_core::planner::{plan_directives, GoalKind, GoalStatus, Planner, PlannerAgent};
use telesim_core::session::{
    Arm, ControlAction, FrameBody, GoalTransition, ManeuverResult, ManualClock, Observation,
    Session, SessionConfig, TalkerChunk,
};
use telesim_core::talker::split_sentences;

struct Harness {
    session: Session,
    patient: PatientSim,
    agent: PlannerAgent,
    clock: ManualClock,
}

impl Harness {
    fn new(case_id: &str) -> Self {
        let case = demo::case(case_id).unwrap();
        let script = Arc::new(case.scenario());
        let planner = Arc::new(Planner::new(&script, case.protocol()).unwrap());
        let clock = ManualClock::new(0);
        let session = Session::open(
            SessionConfig::new(case_id, Arm::Coclinician, 3_600_000),
            Arc::new(clock.clone()),
        )
        .unwrap();
        let mut h = Self {
            session,
            patient: PatientSim::new(script),
            agent: PlannerAgent::new(planner),
            clock,
        };
        h.observe();
        h
    }

    fn observe(&mut self) -> Vec<GoalTransition> {
        let changes = self.agent.observe(self.session.frames()).unwrap();
        for c in &changes {
            self.session
                .submit(FrameBody::GoalStateChange(c.clone()))
                .unwrap();
        }
        changes
    }

    /// Speaks `text` as one talker utterance, lets the patient answer and
    /// updates the planner.
    fn say(&mut self, text: &str) -> (PatientTurn, Vec<GoalTransition>) {
        let utterance = self.session.next_utterance();
        for (index, sentence) in split_sentences(text).into_iter().enumerate() {
            self.clock.advance(1_000);
            self.session
                .submit(FrameBody::TalkerUtteranceChunk(TalkerChunk {
                    utterance,
                    index: index as u32,
                    text: sentence,
                    cites: vec![],
                }))
                .unwrap();
        }
        self.session
            .submit(FrameBody::control(ControlAction::TalkerDone))
            .unwrap();
        let turn = self.patient.respond(text);
        for m in &turn.markers {
            self.session
                .submit(FrameBody::ManeuverMarker(m.clone()))
                .unwrap();
        }
        self.clock.advance(2_000);
        self.session
            .submit(FrameBody::PatientUtterance(turn.utterance.clone()))
            .unwrap();
        self.session
            .submit(FrameBody::control(ControlAction::PatientDone))
            .unwrap();
        let changes = self.observe();
        (turn, changes)
    }

    fn look(&mut self) -> Vec<GoalTransition> {
        let signs = self.patient.visible_state(self.session.elapsed_ms());
        self.session
            .submit(FrameBody::FrameObservation(Observation {
                request: Some(1),
                signs,
            }))
            .unwrap();
        self.observe()
    }

    /// Posts the planner's top directive and returns its instruction.
    fn directive(&mut self) -> (String, String) {
        let d = self
            .agent
            .next_directive()
            .expect("planner has a directive");
        let out = (d.goal_id.to_string(), d.instruction.clone());
        self.session.post_directive(d).unwrap();
        self.observe();
        out
    }

    /// Posts the directive for `goal` regardless of its rank.
    fn direct(&mut self, goal: &str) -> String {
        let d = plan_directives(self.agent.model())
            .into_iter()
            .find(|d| d.goal_id.as_str() == goal)
            .expect("goal has a directive");
        let text = d.instruction.clone();
        self.session.post_directive(d).unwrap();
        self.observe();
        text
    }

    fn status(&self, goal: &str) -> Option<GoalStatus> {
        self.agent.model().goal(goal).map(|g| g.status)
    }
}

pub fn confirming_a_symptom_injects_a_goal() {
    let mut h = Harness::new("myasthenia_gravis");
    assert!(h.status("inspect_eyes").is_none());
    let (turn, changes) = h.say("Have you had any double vision?");
    assert!(turn
        .utterance
        .findings
        .iter()
        .any(|f| f.finding.as_str() == "diplopia" && f.present));
    let injected = changes
        .iter()
        .find(|c| c.goal.as_str() == "inspect_eyes")
        .expect("goal injected");
    assert_eq!(injected.from, None);
    assert_eq!(injected.to, GoalStatus::Pending);
    assert_eq!(injected.kind, GoalKind::VisualInspection);
    let goal = h.agent.model().goal("inspect_eyes").unwrap();
    // Injected while the patient held the floor, after the talker's turn ended.
    assert_eq!(goal.injected_at_turn, 1);
    assert!(h.session.frames().iter().any(
        |f| matches!(&f.body, FrameBody::GoalStateChange(t) if t.goal.as_str() == "inspect_eyes")
    ));

    // Red-flag screening still outranks the new inspection goal.
    let (goal, _) = h.directive();
    assert_eq!(goal, "rf_breathing");
}

pub fn multi_step_exam_issues_one_directive_per_step() {
    let mut h = Harness::new("rotator_cuff");
    h.say("Does it hurt when you reach overhead?");
    assert_eq!(h.status("shoulder_exam"), Some(GoalStatus::Pending));

    let template = &h.agent.model().goal("shoulder_exam").unwrap().steps.clone();
    let mut issued = Vec::new();
    for _ in 0..10 {
        let plan = plan_directives(h.agent.model());
        let per_goal = plan
            .iter()
            .filter(|d| d.goal_id.as_str() == "shoulder_exam")
            .count();
        assert!(
            per_goal <= 1,
            "one directive per goal at each turn boundary"
        );
        let Some(d) = plan
            .into_iter()
            .find(|d| d.goal_id.as_str() == "shoulder_exam")
        else {
            break;
        };
        issued.push(d.instruction.clone());
        h.session.post_directive(d.clone()).unwrap();
        h.observe();
        let (turn, _) = h.say(&d.instruction);
        assert_eq!(
            turn.markers.len(),
            1,
            "each step drives exactly one maneuver"
        );
        assert_eq!(turn.markers[0].result, ManeuverResult::Finding);
    }
    let expected: Vec<String> = template.iter().map(|s| s.instruction.clone()).collect();
    assert_eq!(issued, expected);
    assert_eq!(h.status("shoulder_exam"), Some(GoalStatus::Satisfied));
}

pub fn patient_question_switches_context_then_exam_resumes() {
    let mut h = Harness::new("myasthenia_gravis");
    for _ in 0..2 {
        let (_, text) = h.directive();
        h.say(&text);
    }
    h.say("Have you had any double vision?");
    h.look();
    assert!(h.status("ocular_motility").is_some());

    let steps = h
        .agent
        .model()
        .goal("ocular_motility")
        .unwrap()
        .steps
        .clone();
    let text = h.direct("ocular_motility");
    assert_eq!(text, steps[0].instruction);
    let (turn, changes) = h.say(&text);
    assert_eq!(turn.markers[0].result, ManeuverResult::Finding);
    assert!(turn.utterance.text.contains("serious"));
    assert!(changes
        .iter()
        .any(|c| c.goal.as_str() == "explain_condition" && c.to == GoalStatus::Pending));

    // The question is answered before anything else.
    let (goal, text) = h.directive();
    assert_eq!(goal, "explain_condition");
    h.say(&text);
    assert_eq!(h.status("explain_condition"), Some(GoalStatus::Satisfied));
    assert_eq!(h.status("ocular_motility"), Some(GoalStatus::Active));

    // Back to the exam at the step after the one already done.
    let next = plan_directives(h.agent.model())
        .into_iter()
        .find(|d| d.goal_id.as_str() == "ocular_motility")
        .unwrap();
    assert_eq!(next.instruction, steps[1].instruction);
}

pub fn goal_is_retained_until_the_omitted_slot_is_evidenced() {
    let mut h = Harness::new("myasthenia_gravis");
    let text = h.direct("bulbar");
    let (turn, _) = h.say(&text);
    let said: Vec<_> = turn
        .utterance
        .findings
        .iter()
        .map(|f| f.finding.as_str())
        .collect();
    assert_eq!(
        said,
        ["dysphagia"],
        "compound question drops the chewing detail"
    );
    assert_eq!(h.status("bulbar"), Some(GoalStatus::Active));

    let goal = h.agent.model().goal("bulbar").unwrap().clone();
    let prompt = goal.slot_prompts.values().next().unwrap().clone();
    let d = plan_directives(h.agent.model())
        .into_iter()
        .find(|d| d.goal_id.as_str() == "bulbar")
        .unwrap();
    assert_eq!(d.instruction, prompt, "follow-up targets the missing slot");

    let (turn, _) = h.say(&prompt);
    assert!(turn
        .utterance
        .findings
        .iter()
        .any(|f| f.finding.as_str() == "chewing_fatigue"));
    assert_eq!(h.status("bulbar"), Some(GoalStatus::Satisfied));
}

pub fn early_release_adds_a_hold_constraint_then_captures_the_finding() {
    let mut h = Harness::new("myasthenia_gravis");
    h.say("Have you had any double vision?");
    h.look();
    h.say("Please look to your left and hold it there while I watch.");
    let goal = h
        .agent
        .model()
        .goal("arm_strength")
        .expect("injected by lateral gaze diplopia")
        .clone();
    assert!(goal.constraint.is_none());

    let (turn, _) = h.say(&goal.steps[0].instruction);
    assert_eq!(turn.markers[0].result, ManeuverResult::Brief);
    let corrected = h.agent.model().goal("arm_strength").unwrap();
    assert_eq!(corrected.constraint.map(|c| c.min_duration_s), Some(30));
    assert_eq!(corrected.status, GoalStatus::Active);

    let d = plan_directives(h.agent.model())
        .into_iter()
        .find(|d| d.goal_id.as_str() == "arm_strength")
        .unwrap();
    assert!(d.instruction.contains("30 seconds"), "{}", d.instruction);

    let (turn, _) = h.say(&d.instruction);
    let marker = &turn.markers[0];
    assert_eq!(marker.result, ManeuverResult::Finding);
    assert_eq!(marker.held_s, Some(30));
    assert_eq!(
        marker.finding.as_ref().map(|f| f.as_str()),
        Some("arm_fatigue")
    );
    assert_eq!(h.status("arm_strength"), Some(GoalStatus::Satisfied));
}

pub fn repeated_failure_stalls_a_goal_instead_of_looping() {
    let mut h = Harness::new("asthma");
    let max = h
        .agent
        .model()
        .goal("inspect_breathing")
        .unwrap()
        .max_attempts;
    for _ in 0..max {
        let d = plan_directives(h.agent.model())
            .into_iter()
            .find(|d| d.goal_id.as_str() == "inspect_breathing")
            .unwrap();
        h.session.post_directive(d).unwrap();
        h.observe();
        // The talker never looks, so the slot is never evidenced.
        h.say("Okay.");
    }
    assert!(h
        .agent
        .model()
        .goal("inspect_breathing")
        .unwrap()
        .is_stalled());
    assert!(plan_directives(h.agent.model())
        .iter()
        .all(|d| d.goal_id.as_str() != "inspect_breathing"));
}

/// Every fixture with its name.
pub const FIXTURES: [(&str, fn()); 6] = [
    (
        "confirming_a_symptom_injects_a_goal",
        confirming_a_symptom_injects_a_goal,
    ),
    (
        "multi_step_exam_issues_one_directive_per_step",
        multi_step_exam_issues_one_directive_per_step,
    ),
    (
        "patient_question_switches_context_then_exam_resumes",
        patient_question_switches_context_then_exam_resumes,
    ),
    (
        "goal_is_retained_until_the_omitted_slot_is_evidenced",
        goal_is_retained_until_the_omitted_slot_is_evidenced,
    ),
    (
        "early_release_adds_a_hold_constraint_then_captures_the_finding",
        early_release_adds_a_hold_constraint_then_captures_the_finding,
    ),
    (
        "repeated_failure_stalls_a_goal_instead_of_looping",
        repeated_failure_stalls_a_goal_instead_of_looping,
    ),
];
