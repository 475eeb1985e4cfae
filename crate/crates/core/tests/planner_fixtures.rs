//! Planner behaviours against the bundled scenarios.

mod support;

use support::planner;

#[test]
fn confirming_a_symptom_injects_a_goal() {
    planner::confirming_a_symptom_injects_a_goal();
}

#[test]
fn multi_step_exam_issues_one_directive_per_step() {
    planner::multi_step_exam_issues_one_directive_per_step();
}

#[test]
fn patient_question_switches_context_then_exam_resumes() {
    planner::patient_question_switches_context_then_exam_resumes();
}

#[test]
fn goal_is_retained_until_the_omitted_slot_is_evidenced() {
    planner::goal_is_retained_until_the_omitted_slot_is_evidenced();
}

#[test]
fn early_release_adds_a_hold_constraint_then_captures_the_finding() {
    planner::early_release_adds_a_hold_constraint_then_captures_the_finding();
}

#[test]
fn repeated_failure_stalls_a_goal_instead_of_looping() {
    planner::repeated_failure_stalls_a_goal_instead_of_looping();
}

#[test]
fn fixture_list_is_complete() {
    assert_eq!(planner::FIXTURES.len(), 6);
}
