//! The simulated standardized patient.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scenario::{Disclosure, Maneuver, ScenarioScript};
use crate::ids::{FindingId, ManeuverId};
use crate::pattern::{any_matches, Pattern, Words};
use crate::session::{
    ManeuverMarker, ManeuverResult, PatientUtterance, ReportedFinding, VisibleSign,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatientError {
    #[error("unknown maneuver `{0}`")]
    UnknownManeuver(ManeuverId),
}

/// A finding released in reply to a probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disclosed {
    pub finding: FindingId,
    pub present: bool,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ManeuverOutcome {
    Finding {
        finding: FindingId,
        description: String,
        held_s: Option<u32>,
    },
    /// Performed but released too soon to show the finding.
    Brief {
        held_s: u32,
    },
    ClarificationRequest,
    IncorrectExecution,
}

/// Mutable per-encounter patient state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatientState {
    pub disclosed: BTreeSet<FindingId>,
    /// Findings demonstrated through maneuvers.
    pub shown: BTreeSet<FindingId>,
    /// Facts this actor holds back the first time they are asked about.
    pub hesitant: BTreeSet<FindingId>,
    probe_hits: BTreeMap<FindingId, u32>,
    opened: bool,
    interjections_asked: BTreeSet<usize>,
}

/// Reply to one talker turn: any maneuvers performed, then the spoken reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientTurn {
    pub markers: Vec<ManeuverMarker>,
    pub utterance: PatientUtterance,
}

#[derive(Debug, Clone)]
pub struct PatientSim {
    script: Arc<ScenarioScript>,
    state: PatientState,
}

impl PatientSim {
    pub fn new(script: Arc<ScenarioScript>) -> Self {
        Self {
            script,
            state: PatientState::default(),
        }
    }

    /// A patient whose actor sidesteps the first question about each of
    /// `hesitant` and only answers when asked again.
    pub fn with_hesitancy(script: Arc<ScenarioScript>, hesitant: BTreeSet<FindingId>) -> Self {
        Self {
            script,
            state: PatientState {
                hesitant,
                ..PatientState::default()
            },
        }
    }

    pub fn script(&self) -> &ScenarioScript {
        &self.script
    }

    pub fn state(&self) -> &PatientState {
        &self.state
    }

    pub fn match_probe(&mut self, question: &str) -> Vec<Disclosed> {
        match_probe(&self.script, question, &mut self.state)
    }

    pub fn execute_maneuver(
        &self,
        instruction: &str,
        maneuver: &ManeuverId,
    ) -> Result<ManeuverOutcome, PatientError> {
        execute_maneuver(&self.script, instruction, maneuver)
    }

    pub fn visible_state(&self, t_ms: u64) -> Vec<VisibleSign> {
        visible_state(&self.script, t_ms)
    }

    pub fn actor_reply(&mut self, talker_text: &str) -> PatientUtterance {
        actor_reply(&self.script, talker_text, &mut self.state)
    }

    /// Performs any maneuvers the talker directed, then replies.
    pub fn respond(&mut self, talker_text: &str) -> PatientTurn {
        let words = Words::new(talker_text);
        let mut markers = Vec::new();
        let mut spoken = Vec::new();
        for m in &self.script.maneuvers {
            if !any_matches(&m.cue_patterns, &words, &self.script.synonyms) {
                continue;
            }
            let outcome = outcome_for(&self.script, m, &words);
            let (marker, line) = marker_for(m, &outcome);
            if let Some(f) = &marker.finding {
                self.state.shown.insert(f.clone());
            }
            markers.push(marker);
            spoken.push(line);
        }
        let mut utterance = self.actor_reply(talker_text);
        if !spoken.is_empty() {
            if utterance.findings.is_empty() && utterance.text == self.script.filler {
                utterance.text = spoken.join(" ");
            } else {
                spoken.push(utterance.text);
                utterance.text = spoken.join(" ");
            }
        }
        PatientTurn { markers, utterance }
    }
}

/// Releases facts, red flags and exclusion answers that `question` probes,
/// per their disclosure policy. Already-disclosed findings are returned again
/// without changing state.
pub fn match_probe(
    script: &ScenarioScript,
    question: &str,
    state: &mut PatientState,
) -> Vec<Disclosed> {
    let words = Words::new(question);
    let syn = &script.synonyms;
    let open_prompt = !state.opened && any_matches(&script.open_prompts, &words, syn);

    let probed_facts: Vec<_> = script
        .facts
        .iter()
        .filter(|f| any_matches(&f.probe_patterns, &words, syn))
        .collect();
    let probed_flags: Vec<_> = script
        .red_flags
        .iter()
        .filter(|r| any_matches(&r.probe_patterns, &words, syn))
        .collect();
    let probed_alts: Vec<_> = script
        .alternatives
        .iter()
        .filter(|a| any_matches(&a.exclusion_probe_patterns, &words, syn))
        .collect();
    let compound = probed_facts.len() + probed_flags.len() + probed_alts.len() >= 2;

    let mut out = Vec::new();
    for fact in &script.facts {
        let probed = probed_facts.iter().any(|f| f.finding == fact.finding);
        if probed && compound && fact.omit_on_compound {
            continue;
        }
        let release = match fact.disclosure {
            Disclosure::Volunteered => probed || open_prompt,
            Disclosure::OnSpecificRequest => {
                if probed && state.hesitant.remove(&fact.finding) {
                    continue;
                }
                probed
            }
            Disclosure::OnActiveProbe => {
                if probed && !state.disclosed.contains(&fact.finding) {
                    *state.probe_hits.entry(fact.finding.clone()).or_default() += 1;
                }
                probed
                    && (state.disclosed.contains(&fact.finding)
                        || state.probe_hits[&fact.finding] >= 2)
            }
        };
        if release {
            state.disclosed.insert(fact.finding.clone());
            out.push(Disclosed {
                finding: fact.finding.clone(),
                present: fact.present,
                value: fact.value.clone(),
            });
        }
    }
    for flag in probed_flags {
        state.disclosed.insert(flag.finding.clone());
        out.push(Disclosed {
            finding: flag.finding.clone(),
            present: flag.present,
            value: flag.value.clone(),
        });
    }
    for alt in probed_alts {
        state.disclosed.insert(alt.finding.clone());
        out.push(Disclosed {
            finding: alt.finding.clone(),
            present: false,
            value: alt.value.clone(),
        });
    }
    if open_prompt {
        state.opened = true;
    }
    out
}

pub fn execute_maneuver(
    script: &ScenarioScript,
    instruction: &str,
    maneuver: &ManeuverId,
) -> Result<ManeuverOutcome, PatientError> {
    let m = script
        .maneuver(maneuver)
        .ok_or_else(|| PatientError::UnknownManeuver(maneuver.clone()))?;
    Ok(outcome_for(script, m, &Words::new(instruction)))
}

fn outcome_for(script: &ScenarioScript, m: &Maneuver, words: &Words) -> ManeuverOutcome {
    let syn = &script.synonyms;
    if any_matches(&m.impossible_patterns, words, syn) {
        return ManeuverOutcome::IncorrectExecution;
    }
    if !m
        .required_instruction_elements
        .iter()
        .all(|p| p.matches(words, syn))
    {
        return ManeuverOutcome::ClarificationRequest;
    }
    let asked = parse_duration_s(words);
    match m.min_duration_s {
        Some(min) if asked.is_none_or(|d| d < min) => ManeuverOutcome::Brief {
            held_s: asked.unwrap_or(m.brief_hold_s),
        },
        _ => ManeuverOutcome::Finding {
            finding: m.scripted_finding.clone(),
            description: m.finding_description.clone(),
            held_s: asked,
        },
    }
}

fn marker_for(m: &Maneuver, outcome: &ManeuverOutcome) -> (ManeuverMarker, String) {
    let (result, held_s, finding, description, line) = match outcome {
        ManeuverOutcome::Finding {
            finding,
            description,
            held_s,
        } => (
            ManeuverResult::Finding,
            *held_s,
            Some(finding.clone()),
            description.clone(),
            "Okay, I'm doing that now.".to_owned(),
        ),
        ManeuverOutcome::Brief { held_s } => (
            ManeuverResult::Brief,
            Some(*held_s),
            None,
            format!("{} performed for {held_s} s", m.label),
            m.brief_reply.clone(),
        ),
        ManeuverOutcome::ClarificationRequest => (
            ManeuverResult::Clarification,
            None,
            None,
            format!("{}: patient unsure what to do", m.label),
            m.clarification.clone(),
        ),
        ManeuverOutcome::IncorrectExecution => (
            ManeuverResult::Incorrect,
            None,
            None,
            format!("{}: instruction could not be followed", m.label),
            m.incorrect_reply.clone(),
        ),
    };
    (
        ManeuverMarker {
            maneuver: m.id.clone(),
            result,
            held_s,
            finding,
            description,
        },
        line,
    )
}

const NUMBER_WORDS: [(&str, u32); 14] = [
    ("five", 5),
    ("ten", 10),
    ("fifteen", 15),
    ("twenty", 20),
    ("thirty", 30),
    ("forty", 40),
    ("fortyfive", 45),
    ("fifty", 50),
    ("sixty", 60),
    ("ninety", 90),
    ("one", 1),
    ("two", 2),
    ("three", 3),
    ("a", 1),
];

/// Longest duration named in the text, in seconds: "30 seconds",
/// "thirty secs", "a minute", "2 minutes".
pub fn parse_duration_s(words: &Words) -> Option<u32> {
    let w = words.as_slice();
    w.windows(2)
        .filter_map(|pair| {
            let n = pair[0].parse::<u32>().ok().or_else(|| {
                NUMBER_WORDS
                    .iter()
                    .find(|(k, _)| *k == pair[0])
                    .map(|(_, v)| *v)
            })?;
            let unit = &pair[1];
            if unit.starts_with("sec") {
                Some(n)
            } else if unit.starts_with("min") {
                Some(n * 60)
            } else {
                None
            }
        })
        .max()
}

/// Unevoked signs showing at session time `t_ms`.
pub fn visible_state(script: &ScenarioScript, t_ms: u64) -> Vec<VisibleSign> {
    script
        .unevoked_signs
        .iter()
        .filter(|s| s.active_at(t_ms))
        .map(|s| VisibleSign {
            sign: s.sign.clone(),
            description: s.description.clone(),
        })
        .collect()
}

fn farewell_patterns() -> &'static [Pattern] {
    use std::sync::OnceLock;
    static P: OnceLock<Vec<Pattern>> = OnceLock::new();
    P.get_or_init(|| {
        ["goodbye", "take care", "bye"]
            .iter()
            .map(|s| Pattern::parse(s).expect("static pattern"))
            .collect()
    })
}

/// The patient's spoken reply to one talker turn.
pub fn actor_reply(
    script: &ScenarioScript,
    talker_text: &str,
    state: &mut PatientState,
) -> PatientUtterance {
    let opening = !state.opened;
    let known = state.disclosed.clone();
    // Things already said are not repeated.
    let disclosures: Vec<_> = match_probe(script, talker_text, state)
        .into_iter()
        .filter(|d| !known.contains(&d.finding))
        .collect();
    let mut parts = Vec::new();
    if opening && state.opened {
        parts.push(script.chief_concern.clone());
    }
    parts.extend(disclosures.iter().map(|d| d.value.clone()));

    let asked = script.interjections.iter().enumerate().find(|(i, j)| {
        !state.interjections_asked.contains(i)
            && (state.disclosed.contains(&j.after) || state.shown.contains(&j.after))
    });
    if let Some((i, j)) = asked {
        state.interjections_asked.insert(i);
        parts.push(j.question.clone());
    }

    let words = Words::new(talker_text);
    if any_matches(farewell_patterns(), &words, &Default::default()) {
        parts.push(script.farewell.clone());
    }
    if parts.is_empty() {
        parts.push(script.filler.clone());
    }
    let mut seen = BTreeSet::new();
    let findings = disclosures
        .into_iter()
        .filter(|d| seen.insert(d.finding.clone()))
        .map(|d| ReportedFinding {
            finding: d.finding,
            present: d.present,
        })
        .collect();
    PatientUtterance {
        text: parts.join(" "),
        findings,
    }
}
