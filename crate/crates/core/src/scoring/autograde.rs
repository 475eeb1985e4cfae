//! Deterministic grading of a trace against a case rubric.

use std::collections::BTreeMap;

use super::rubric::{CaseRubric, Matcher, Pred};
use super::{EncounterRef, Rater, ScoreSheet, ScoringError};
use crate::evidence::SourceClass;
use crate::pattern::Synonyms;
use crate::session::{EventFrame, FrameBody};
use crate::trace::EncounterTrace;

pub fn matches(m: &Matcher, frame: &EventFrame, syn: &Synonyms) -> bool {
    match (m, &frame.body) {
        (Matcher::TalkerSays(p), FrameBody::TalkerUtteranceChunk(c)) => {
            p.matches_text(&c.text, syn)
        }
        (Matcher::PatientSays(p), FrameBody::PatientUtterance(u)) => p.matches_text(&u.text, syn),
        (Matcher::PatientDiscloses(f), _) => {
            frame.evidences(f) == Some(SourceClass::PatientReported)
        }
        (Matcher::Observed(f), _) => frame.evidences(f) == Some(SourceClass::Observed),
        (Matcher::Maneuver { id, result }, FrameBody::ManeuverMarker(mk)) => {
            &mk.maneuver == id && result.is_none_or(|r| r == mk.result)
        }
        (Matcher::FrameRequest, FrameBody::FrameCaptureRequest(_)) => true,
        (Matcher::TalkerCites(f), FrameBody::TalkerUtteranceChunk(c)) => c.cites.iter().any(|t| {
            &t.finding == f && t.source != SourceClass::Inferred && t.supporting_frame.is_some()
        }),
        _ => false,
    }
}

pub fn holds(pred: &Pred, frames: &[EventFrame], syn: &Synonyms) -> bool {
    match pred {
        Pred::Exists(m) => frames.iter().any(|f| matches(m, f, syn)),
        Pred::Count { matcher, at_least } => {
            frames.iter().filter(|f| matches(matcher, f, syn)).count() >= *at_least as usize
        }
        Pred::Sequence(ms) => {
            // Greedy earliest match is optimal for subsequence search.
            let mut it = frames.iter();
            ms.iter().all(|m| it.any(|f| matches(m, f, syn)))
        }
        Pred::All(ps) => ps.iter().all(|p| holds(p, frames, syn)),
        Pred::Any(ps) => ps.iter().any(|p| holds(p, frames, syn)),
    }
}

/// Scores every item of `rubric` on `trace`.
pub fn autograde(trace: &EncounterTrace, rubric: &CaseRubric) -> Result<ScoreSheet, ScoringError> {
    let h = trace.header();
    if h.scenario != rubric.scenario {
        return Err(ScoringError::ScenarioMismatch {
            trace: h.scenario.clone(),
            rubric: rubric.scenario.clone(),
        });
    }
    let frames = trace.frames();
    let items = rubric
        .items()
        .map(|item| {
            let (full, partial) = item.rule.expand();
            let score = if holds(&full, frames, &rubric.synonyms) {
                2
            } else if partial.is_some_and(|p| holds(&p, frames, &rubric.synonyms)) {
                1
            } else {
                0
            };
            (item.id.clone(), score)
        })
        .collect::<BTreeMap<_, _>>();
    Ok(ScoreSheet {
        encounter: EncounterRef {
            encounter_id: None,
            scenario: h.scenario.clone(),
            arm: h.arm,
            actor: h.actor.clone(),
        },
        items,
        universal: BTreeMap::new(),
        rater: Rater::Autograder,
    })
}
