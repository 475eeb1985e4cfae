//! Generators and independent oracles shared by the property tests and the
//! acceptance run.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;

use telesim_core::evidence::{Cite, EvidenceTag, SourceClass};
use telesim_core::ids::FindingId;
use telesim_core::patient::{Disclosure, ScenarioScript};
use telesim_core::planner::{Directive, GoalKind, GoalStatus};
use telesim_core::session::{
    step_turn_state, Arm, BargeIn, CaptureRequest, ControlAction, EventFrame, FrameBody,
    GoalTransition, ManeuverMarker, ManeuverResult, ManualClock, Observation, PatientUtterance,
    ReportedFinding, Seq, Session, SessionConfig, TalkerChunk, TurnAction, TurnEvent, TurnState,
    VisibleSign,
};
use telesim_core::trace::EncounterTrace;

pub mod planner;

const FINDINGS: [&str; 6] = ["wheeze", "ptosis", "diplopia", "fever", "rash", "cough"];

fn finding(rng: &mut impl Rng) -> FindingId {
    FindingId::new(*FINDINGS.choose(rng).unwrap())
}

fn random_cites(rng: &mut impl Rng, assertion: &str, frames: usize) -> Vec<EvidenceTag> {
    let n = if rng.random_bool(0.7) {
        0
    } else {
        rng.random_range(1..=2)
    };
    (0..n)
        .map(|_| {
            let f = finding(rng);
            let cite = if frames == 0 || rng.random_bool(0.3) {
                Cite::inferred(f)
            } else {
                let source = if rng.random_bool(0.5) {
                    SourceClass::Observed
                } else {
                    SourceClass::PatientReported
                };
                Cite::supported(f, source, rng.random_range(0..frames as Seq))
            };
            EvidenceTag::from_cite(assertion, &cite)
        })
        .collect()
}

fn random_body(rng: &mut impl Rng, session: &Session) -> FrameBody {
    let frames = session.frames().len();
    match rng.random_range(0..12) {
        0..=3 => {
            let (utterance, index) = match session.utterance_in_progress() {
                Some(u) if rng.random_bool(0.9) => {
                    let last = session
                        .frames()
                        .iter()
                        .rev()
                        .find_map(|f| f.as_chunk().filter(|c| c.utterance == u).map(|c| c.index))
                        .unwrap_or(0);
                    (u, last + 1)
                }
                // Occasionally out of order, to exercise rejection.
                Some(u) => (u, 0),
                None => (session.next_utterance(), 0),
            };
            let assertion = TalkerChunk::assertion_id(utterance, index);
            FrameBody::TalkerUtteranceChunk(TalkerChunk {
                utterance,
                index,
                text: format!("Sentence {index} of {utterance}."),
                cites: random_cites(rng, &assertion, frames),
            })
        }
        4 => FrameBody::BargeIn(BargeIn {
            text: rng.random_bool(0.5).then(|| "Wait".to_owned()),
        }),
        5 => FrameBody::PatientUtterance(PatientUtterance {
            text: "It has been bothering me.".into(),
            findings: if rng.random_bool(0.5) {
                vec![ReportedFinding {
                    finding: finding(rng),
                    present: rng.random_bool(0.7),
                }]
            } else {
                vec![]
            },
        }),
        6 => FrameBody::control(ControlAction::TalkerDone),
        7 => FrameBody::control(ControlAction::PatientDone),
        8 => FrameBody::FrameObservation(Observation {
            request: rng.random_bool(0.5).then(|| rng.random_range(1..5)),
            signs: vec![VisibleSign {
                sign: finding(rng),
                description: "visible".into(),
            }],
        }),
        9 => {
            let shows = rng.random_bool(0.5);
            FrameBody::ManeuverMarker(ManeuverMarker {
                maneuver: "gaze_up".into(),
                result: if shows {
                    ManeuverResult::Finding
                } else {
                    ManeuverResult::Brief
                },
                held_s: rng.random_bool(0.5).then(|| rng.random_range(1..60)),
                finding: shows.then(|| finding(rng)),
                description: "performed".into(),
            })
        }
        10 => FrameBody::FrameCaptureRequest(CaptureRequest {
            request: rng.random_range(1..5),
        }),
        _ => FrameBody::GoalStateChange(GoalTransition {
            goal: "hx".into(),
            kind: GoalKind::ElicitHistory,
            from: rng.random_bool(0.5).then_some(GoalStatus::Pending),
            to: GoalStatus::Active,
        }),
    }
}

fn directive(rng: &mut impl Rng) -> Directive {
    Directive {
        goal_id: "hx".into(),
        kind: GoalKind::ElicitHistory,
        instruction: "Ask about the onset.".into(),
        priority: rng.random_range(0..5),
        injected_at_turn: 0,
        cites: vec![],
    }
}

/// Drives a session with `ops` random client operations: frame submissions,
/// directives, barge-in flushes and clock advances. Rejected submissions are
/// part of the stream; the session decides what is logged.
pub fn random_session(rng: &mut impl Rng, ops: usize, grace: u32) -> Session {
    let clock = ManualClock::new(rng.random_range(0..10_000));
    let max_duration = rng.random_range(5_000..200_000);
    let mut session = Session::open(
        SessionConfig::new("fuzz", *Arm::ALL.choose(rng).unwrap(), max_duration)
            .with_grace(grace)
            .with_actor("actor_01"),
        Arc::new(clock.clone()),
    )
    .unwrap();
    for _ in 0..ops {
        if !session.is_open() {
            break;
        }
        match rng.random_range(0..20) {
            0..=13 => {
                let body = random_body(rng, &session);
                let _ = session.submit(body);
            }
            14 => {
                let _ = session.post_directive(directive(rng));
            }
            15 if session.turn().pending_truncation() => {
                let u = session
                    .utterance_in_progress()
                    .unwrap_or_else(|| session.next_utterance());
                let start = rng.random_range(1..4);
                let in_flight = (start..start + rng.random_range(0..5))
                    .map(|index| TalkerChunk {
                        utterance: u,
                        index,
                        text: format!("Remaining {index}."),
                        cites: vec![],
                    })
                    .collect();
                let _ = session.apply_barge_in(in_flight);
            }
            16..=18 => clock.advance(rng.random_range(0..3_000)),
            19 if rng.random_bool(0.05) => {
                let _ = session.submit(FrameBody::control(ControlAction::Close));
            }
            _ => {}
        }
    }
    session
}

/// Checks a session log against the protocol invariants: contiguous seqs,
/// non-decreasing timestamps, and at most `grace` talker chunks between a
/// truncating barge-in and the end of the talker's turn, the last of which
/// is the only one flagged truncated.
pub fn check_log(frames: &[EventFrame], grace: u32) -> Result<(), String> {
    let mut state = TurnState::IDLE;
    let mut after_barge_in: Option<u32> = None;
    let mut last_ts = 0;
    for (i, frame) in frames.iter().enumerate() {
        if frame.seq != i as Seq {
            return Err(format!("frame {i} has seq {}", frame.seq));
        }
        if frame.ts_ms < last_ts {
            return Err(format!(
                "frame {i} timestamp {} precedes {last_ts}",
                frame.ts_ms
            ));
        }
        last_ts = frame.ts_ms;
        if let Some(n) = after_barge_in.as_mut() {
            if frame.as_chunk().is_some() {
                *n += 1;
                if *n > grace {
                    return Err(format!(
                        "chunk {i} is talker chunk {n} after barge-in, grace {grace}"
                    ));
                }
                if frame.truncated != (*n == grace) {
                    return Err(format!(
                        "chunk {i} truncated flag is {} at position {n}",
                        frame.truncated
                    ));
                }
            }
        } else if frame.truncated {
            return Err(format!("frame {i} is flagged truncated outside a barge-in"));
        }
        let step = step_turn_state(state, TurnEvent::of(&frame.body));
        state = step.state;
        if step.action == TurnAction::TruncateTalker {
            after_barge_in = Some(0);
        }
        if matches!(
            frame.control_action(),
            Some(ControlAction::TalkerDone | ControlAction::Close | ControlAction::Timeout)
        ) {
            after_barge_in = None;
        }
    }
    Ok(())
}

/// A valid trace built from a random session stream.
pub fn random_trace(rng: &mut impl Rng) -> EncounterTrace {
    let ops = rng.random_range(0..80);
    let grace = rng.random_range(0..3);
    let mut session = random_session(rng, ops, grace);
    session.close().expect("session logs are valid traces")
}

/// How an assertion planted in an audit fixture fails to be supported.
#[derive(Debug, Clone, Copy)]
enum Flaw {
    InferredNeverShown,
    InferredDespiteEvidence,
    PointsForward,
    WrongKind,
    WrongFinding,
}

const FLAWS: [Flaw; 5] = [
    Flaw::InferredNeverShown,
    Flaw::InferredDespiteEvidence,
    Flaw::PointsForward,
    Flaw::WrongKind,
    Flaw::WrongFinding,
];

/// A trace with `k` supported and `m` unsupported assertions in random
/// order, each assertion a one-chunk utterance. Returns the assertion ids of
/// the unsupported ones.
pub fn planted_audit_trace(
    rng: &mut impl Rng,
    k: usize,
    m: usize,
) -> (EncounterTrace, BTreeSet<String>) {
    let clock = ManualClock::new(0);
    let mut session = Session::open(
        SessionConfig::new("audit", Arm::Coclinician, u64::MAX / 4),
        Arc::new(clock.clone()),
    )
    .unwrap();
    // Evidence pool: which frames show which finding, by source class.
    let mut reported: Vec<(FindingId, Seq)> = Vec::new();
    let mut observed: Vec<(FindingId, Seq)> = Vec::new();
    let never: Vec<FindingId> = (0..4)
        .map(|i| FindingId::new(format!("unseen_{i}")))
        .collect();

    let mut kinds: Vec<bool> = std::iter::repeat_n(true, k)
        .chain(std::iter::repeat_n(false, m))
        .collect();
    use rand::seq::SliceRandom;
    kinds.shuffle(rng);

    let mut planted = BTreeSet::new();
    let mut counter = 0usize;
    for supported in kinds {
        // Keep the evidence pool growing so later assertions have choices.
        for _ in 0..rng.random_range(0..3) {
            counter += 1;
            let f = FindingId::new(format!("f{counter}"));
            clock.advance(100);
            let seq = if rng.random_bool(0.5) {
                session
                    .submit(FrameBody::PatientUtterance(PatientUtterance {
                        text: format!("I have {f}."),
                        findings: vec![ReportedFinding {
                            finding: f.clone(),
                            present: true,
                        }],
                    }))
                    .unwrap()
            } else if rng.random_bool(0.5) {
                session
                    .submit(FrameBody::FrameObservation(Observation {
                        request: None,
                        signs: vec![VisibleSign {
                            sign: f.clone(),
                            description: "seen".into(),
                        }],
                    }))
                    .unwrap()
            } else {
                session
                    .submit(FrameBody::ManeuverMarker(ManeuverMarker {
                        maneuver: "m".into(),
                        result: ManeuverResult::Finding,
                        held_s: None,
                        finding: Some(f.clone()),
                        description: "shown".into(),
                    }))
                    .unwrap()
            };
            match session.frames()[seq as usize].body {
                FrameBody::PatientUtterance(_) => reported.push((f, seq)),
                _ => observed.push((f, seq)),
            }
        }
        if reported.is_empty() && observed.is_empty() {
            counter += 1;
            let f = FindingId::new(format!("f{counter}"));
            let seq = session
                .submit(FrameBody::PatientUtterance(PatientUtterance {
                    text: "Yes.".into(),
                    findings: vec![ReportedFinding {
                        finding: f.clone(),
                        present: true,
                    }],
                }))
                .unwrap();
            reported.push((f, seq));
        }

        let utterance = session.next_utterance();
        let assertion = TalkerChunk::assertion_id(utterance, 0);
        let pick = |rng: &mut _, pool: &Vec<(FindingId, Seq)>| pool.choose(rng).cloned();
        let mut cites = Vec::new();
        // Supported assertions may carry several backed tags.
        let good_tags = if supported {
            rng.random_range(1..=3)
        } else {
            rng.random_range(0..=2)
        };
        for _ in 0..good_tags {
            let use_reported =
                observed.is_empty() || (!reported.is_empty() && rng.random_bool(0.5));
            let cite = if use_reported {
                let (f, s) = pick(rng, &reported).unwrap();
                Cite::supported(f, SourceClass::PatientReported, s)
            } else {
                let (f, s) = pick(rng, &observed).unwrap();
                Cite::supported(f, SourceClass::Observed, s)
            };
            cites.push(cite);
        }
        if !supported {
            let next_seq = session.frames().len() as Seq;
            let cite = match *FLAWS.choose(rng).unwrap() {
                Flaw::InferredNeverShown => Cite::inferred(never.choose(rng).unwrap().clone()),
                Flaw::InferredDespiteEvidence => {
                    let (f, _) = pick(
                        rng,
                        if reported.is_empty() {
                            &observed
                        } else {
                            &reported
                        },
                    )
                    .unwrap();
                    Cite::inferred(f)
                }
                Flaw::PointsForward => {
                    let (f, _) = pick(
                        rng,
                        if reported.is_empty() {
                            &observed
                        } else {
                            &reported
                        },
                    )
                    .unwrap();
                    Cite::supported(
                        f,
                        SourceClass::PatientReported,
                        next_seq + rng.random_range(0..5),
                    )
                }
                Flaw::WrongKind => match (pick(rng, &reported), pick(rng, &observed)) {
                    (Some((f, s)), _) if rng.random_bool(0.5) => {
                        Cite::supported(f, SourceClass::Observed, s)
                    }
                    (_, Some((f, s))) => Cite::supported(f, SourceClass::PatientReported, s),
                    (Some((f, s)), None) => Cite::supported(f, SourceClass::Observed, s),
                    (None, None) => unreachable!("pool is never empty"),
                },
                Flaw::WrongFinding => {
                    let (_, s) = pick(
                        rng,
                        if reported.is_empty() {
                            &observed
                        } else {
                            &reported
                        },
                    )
                    .unwrap();
                    let source = match session.frames()[s as usize].body {
                        FrameBody::PatientUtterance(_) => SourceClass::PatientReported,
                        _ => SourceClass::Observed,
                    };
                    Cite::supported(never.choose(rng).unwrap().clone(), source, s)
                }
            };
            let at = rng.random_range(0..=cites.len());
            cites.insert(at, cite);
            planted.insert(assertion.clone());
        }
        clock.advance(500);
        session
            .submit(FrameBody::TalkerUtteranceChunk(TalkerChunk {
                utterance,
                index: 0,
                text: "Based on what we found, this looks consistent.".into(),
                cites: cites
                    .iter()
                    .map(|c| EvidenceTag::from_cite(assertion.as_str(), c))
                    .collect(),
            }))
            .unwrap();
        session
            .submit(FrameBody::control(ControlAction::TalkerDone))
            .unwrap();
    }
    (session.close().unwrap(), planted)
}

/// Independent reading of the probe-pattern language: the words each
/// alternative's first token accepts, as (stem, is_prefix) pairs.
fn leading_tokens(source: &str, synonyms: &BTreeMap<String, Vec<String>>) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    for alt in source.split('|') {
        let Some(first) = alt.split_whitespace().next() else {
            continue;
        };
        let expand: Vec<String> = match first.strip_prefix('@') {
            Some(group) => synonyms.get(group).cloned().unwrap_or_default(),
            None => vec![first.to_owned()],
        };
        for raw in expand {
            let raw = raw.to_lowercase();
            match raw.strip_suffix('*') {
                Some(stem) => out.push((stem.to_owned(), true)),
                None => out.push((raw, false)),
            }
        }
    }
    out
}

/// Oracle for "this text cannot match any probe of the script": no word of
/// the text is accepted by the first token of any alternative of any probe
/// or open prompt.
pub struct ProbeOracle {
    leads: Vec<(String, bool)>,
}

impl ProbeOracle {
    pub fn new(script: &ScenarioScript) -> Self {
        let synonyms: BTreeMap<String, Vec<String>> =
            serde_json::from_value(serde_json::to_value(&script.synonyms).unwrap()).unwrap();
        let sources = script
            .facts
            .iter()
            .flat_map(|f| &f.probe_patterns)
            .chain(script.red_flags.iter().flat_map(|r| &r.probe_patterns))
            .chain(
                script
                    .alternatives
                    .iter()
                    .flat_map(|a| &a.exclusion_probe_patterns),
            )
            .chain(&script.open_prompts);
        let leads = sources
            .flat_map(|p| leading_tokens(p.source(), &synonyms))
            .collect();
        Self { leads }
    }

    pub fn cannot_match(&self, text: &str) -> bool {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .all(|w| {
                let w = w.to_lowercase();
                !self.leads.iter().any(|(stem, prefix)| {
                    if *prefix {
                        w.starts_with(stem.as_str())
                    } else {
                        &w == stem
                    }
                })
            })
    }

    /// Near-miss words: probe stems with a letter dropped or swapped.
    pub fn near_misses(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (stem, _) in &self.leads {
            let chars: Vec<char> = stem.chars().collect();
            if chars.len() < 3 {
                continue;
            }
            out.push(chars[1..].iter().collect());
            let mut swapped = chars.clone();
            swapped.swap(0, 1);
            out.push(swapped.into_iter().collect());
            out.push(format!("un{}", &stem[..stem.len() - 1]));
        }
        out
    }
}

const FILLER: [&str; 40] = [
    "how", "are", "you", "today", "tell", "me", "about", "anything", "else", "the", "a", "is",
    "it", "and", "or", "do", "did", "any", "have", "has", "been", "with", "your", "my", "that",
    "this", "please", "okay", "right", "thanks", "hmm", "so", "well", "good", "bad", "feel",
    "some", "lately", "recently", "much",
];

/// A random probe from filler words and near misses that the oracle says
/// cannot match; resamples until one qualifies.
pub fn non_matching_probe(rng: &mut impl Rng, oracle: &ProbeOracle, near: &[String]) -> String {
    loop {
        let n = rng.random_range(1..12);
        let words: Vec<String> = (0..n)
            .map(|_| {
                if !near.is_empty() && rng.random_bool(0.4) {
                    near.choose(rng).unwrap().clone()
                } else {
                    (*FILLER.choose(rng).unwrap()).to_owned()
                }
            })
            .collect();
        let mut text = words.join(" ");
        if rng.random_bool(0.5) {
            text.push('?');
        }
        if oracle.cannot_match(&text) {
            return text;
        }
    }
}

/// Findings the script only releases when asked.
pub fn guarded_facts(script: &ScenarioScript) -> BTreeSet<FindingId> {
    script
        .facts
        .iter()
        .filter(|f| f.disclosure != Disclosure::Volunteered)
        .map(|f| f.finding.clone())
        .collect()
}

/// Plain words a pattern alternative needs, with prefix stars dropped.
fn phrase_of(source: &str) -> String {
    let alt = source.split('|').next().unwrap_or_default();
    alt.split_whitespace()
        .map(|t| t.trim_end_matches('*').trim_start_matches('@'))
        .collect::<Vec<_>>()
        .join(" ")
}

/// An instruction carrying the maneuver's cue, every required element and,
/// when the maneuver needs one, a long enough hold time.
pub fn full_instruction(script: &ScenarioScript, maneuver: usize) -> String {
    let m = &script.maneuvers[maneuver];
    let mut parts = vec![phrase_of(m.cue_patterns[0].source())];
    parts.extend(
        m.required_instruction_elements
            .iter()
            .map(|p| phrase_of(p.source())),
    );
    if let Some(min) = m.min_duration_s {
        parts.push(format!("for {} seconds", min + 10));
    }
    parts.join(" ") + "."
}

/// `instruction` with every word removed that any token of any alternative
/// of `element` would accept.
pub fn delete_element(instruction: &str, element: &str) -> String {
    let tokens: Vec<(String, bool)> = element
        .split('|')
        .flat_map(|alt| alt.split_whitespace())
        .map(|t| match t.strip_suffix('*') {
            Some(stem) => (stem.to_lowercase(), true),
            None => (t.to_lowercase(), false),
        })
        .collect();
    instruction
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .filter(|w| {
            let w = w.to_lowercase();
            !tokens.iter().any(|(stem, prefix)| {
                if *prefix {
                    w.starts_with(stem.as_str())
                } else {
                    &w == stem
                }
            })
        })
        .collect::<Vec<_>>()
        .join(" ")
}
