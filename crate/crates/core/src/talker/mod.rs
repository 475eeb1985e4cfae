//! The patient-facing talker: composes replies from the visible dialogue and
//! pending planner directives, and streams them into a session as chunks.
//!
//! Backends only ever see a [`DialogueContext`] (the log prefix and a
//! persona) and the directives; nothing from the scenario script reaches
//! them.

mod emit;
mod remote;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emit::{emit_plan, request_frame, Emission, EmitStep};
pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{AgendaItem, ReplyRule, ScriptedBackend, TalkerScript};

use crate::evidence::{Cite, SourceClass};
use crate::ids::FindingId;
use crate::planner::Directive;
use crate::session::{ControlAction, EventFrame, FrameBody, SessionError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TalkerError {
    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },
    #[error("backend `{0}` produced an empty plan")]
    EmptyPlan(String),
    #[error("directives are not sorted by priority")]
    UnsortedDirectives,
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Persona {
    pub name: String,
    #[serde(default)]
    pub style: String,
}

/// Everything a backend may look at.
#[derive(Debug, Clone, Copy)]
pub struct DialogueContext<'a> {
    pub frames: &'a [EventFrame],
    pub persona: &'a Persona,
}

impl<'a> DialogueContext<'a> {
    pub fn new(frames: &'a [EventFrame], persona: &'a Persona) -> Self {
        Self { frames, persona }
    }

    /// Index just past the talker's most recent finished utterance.
    fn since_last_talker_turn(&self) -> usize {
        self.frames
            .iter()
            .rposition(|f| {
                f.control_action() == Some(ControlAction::TalkerDone) || f.as_chunk().is_some()
            })
            .map_or(0, |i| i + 1)
    }

    pub fn talker_has_spoken(&self) -> bool {
        self.frames.iter().any(|f| f.as_chunk().is_some())
    }

    /// Patient utterances since the talker last spoke.
    pub fn recent_patient(&self) -> impl Iterator<Item = &'a EventFrame> {
        self.frames[self.since_last_talker_turn()..]
            .iter()
            .filter(|f| f.as_patient().is_some())
    }

    /// Directives logged since the talker last spoke, in directing order.
    pub fn pending_directives(&self) -> Vec<Directive> {
        let mut out: Vec<Directive> = self.frames[self.since_last_talker_turn()..]
            .iter()
            .filter_map(|f| match &f.body {
                FrameBody::DirectiveInjected(d) => Some(d.clone()),
                _ => None,
            })
            .collect();
        out.sort_by_key(|d| (d.priority, d.injected_at_turn));
        out
    }

    /// Texts of everything the talker has said.
    pub fn talker_texts(&self) -> impl Iterator<Item = &'a str> {
        self.frames
            .iter()
            .filter_map(|f| f.as_chunk())
            .map(|c| c.text.as_str())
    }

    /// Best available evidence for `finding`: the latest frame that shows
    /// it, or an inferred cite when none does.
    pub fn cite(&self, finding: &FindingId) -> Cite {
        self.frames
            .iter()
            .rev()
            .find_map(|f| {
                f.evidences(finding)
                    .map(|src| Cite::supported(finding.clone(), src, f.seq))
            })
            .unwrap_or_else(|| Cite::inferred(finding.clone()))
    }
}

/// One streamed segment and the evidence for what it asserts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedChunk {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cites: Vec<Cite>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtterancePlan {
    pub chunks: Vec<PlannedChunk>,
    #[serde(default)]
    pub frame_request: bool,
    /// The talker is ending the encounter with this utterance.
    #[serde(default)]
    pub closes: bool,
}

impl UtterancePlan {
    /// Appends `text` split into sentences, putting `cites` on the last one.
    pub fn say(&mut self, text: &str, cites: Vec<Cite>) {
        let mut sentences = split_sentences(text);
        if sentences.is_empty() {
            return;
        }
        let last = sentences.pop().unwrap_or_default();
        self.chunks
            .extend(sentences.into_iter().map(|text| PlannedChunk {
                text,
                cites: vec![],
            }));
        self.chunks.push(PlannedChunk { text: last, cites });
    }

    pub fn cites(&self) -> impl Iterator<Item = &Cite> {
        self.chunks.iter().flat_map(|c| &c.cites)
    }

    pub fn text(&self) -> String {
        self.chunks
            .iter()
            .map(|c| c.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

/// Splits on sentence-ending punctuation followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(ch) = chars.next() {
        current.push(ch);
        if matches!(ch, '.' | '?' | '!') && chars.peek().is_none_or(|c| c.is_whitespace()) {
            let s = current.trim();
            if !s.is_empty() {
                out.push(s.to_owned());
            }
            current.clear();
        }
    }
    let s = current.trim();
    if !s.is_empty() {
        out.push(s.to_owned());
    }
    out
}

pub trait ResponderBackend: Send + Sync {
    fn name(&self) -> &str;

    fn reply(
        &self,
        ctx: &DialogueContext<'_>,
        directives: &[Directive],
    ) -> Result<UtterancePlan, TalkerError>;
}

/// Asks the backend for the next utterance. Directives must be in directing
/// order; the backend is expected to address the first one first.
pub fn compose_reply(
    ctx: &DialogueContext<'_>,
    directives: &[Directive],
    backend: &dyn ResponderBackend,
) -> Result<UtterancePlan, TalkerError> {
    if directives
        .windows(2)
        .any(|w| (w[0].priority, w[0].injected_at_turn) > (w[1].priority, w[1].injected_at_turn))
    {
        return Err(TalkerError::UnsortedDirectives);
    }
    let plan = backend.reply(ctx, directives)?;
    if plan.is_empty() || plan.chunks.iter().any(|c| c.text.trim().is_empty()) {
        return Err(TalkerError::EmptyPlan(backend.name().to_owned()));
    }
    if plan.cites().any(|c| !c.is_well_formed()) {
        return Err(TalkerError::Backend {
            backend: backend.name().to_owned(),
            message: "plan carries a malformed cite".into(),
        });
    }
    Ok(plan)
}

/// Source class a cite would carry if taken from `frame`.
pub fn source_of(frame: &EventFrame, finding: &FindingId) -> Option<SourceClass> {
    frame.evidences(finding)
}
