//! Full-duplex encounter sessions: an append-only, time-stamped frame log
//! driven through the turn-taking state machine, with barge-in truncation and
//! turn-boundary delivery of planner directives.
//!
//! A [`Session`] is the single append point for one encounter. Callers that
//! share a session across tasks wrap it in a mutex; [`SessionHub`] does that
//! for the live service.

mod clock;
mod frame;
mod hub;
mod turn;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clock::{Clock, ManualClock, SharedClock, SystemClock};
pub use frame::{
    BargeIn, CaptureRequest, Control, ControlAction, EventFrame, FrameBody, FrameKind,
    GoalTransition, ManeuverMarker, ManeuverResult, Observation, PatientUtterance, ReportedFinding,
    Seq, TalkerChunk, VisibleSign,
};
pub use hub::SessionHub;
pub use turn::{replay, step_turn_state, Phase, Step, TurnAction, TurnEvent, TurnState};

use crate::ids::{ActorId, ScenarioId};
use crate::planner::Directive;
use crate::trace::{EncounterTrace, TraceHeader};

/// Process-unique session identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(u64);

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

impl SessionId {
    pub fn fresh() -> Self {
        Self(NEXT_SESSION.fetch_add(1, Ordering::Relaxed))
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for SessionId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(Self)
    }
}

/// The four study arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Talker with the clinical planner attached.
    Coclinician,
    /// Talker alone.
    CoclinicianNoPlanner,
    /// Single realtime model that pulls video frames through a tool call.
    ComparatorRealtime,
    /// A human clinician.
    Human,
}

impl Arm {
    pub const ALL: [Arm; 4] = [
        Self::Coclinician,
        Self::CoclinicianNoPlanner,
        Self::ComparatorRealtime,
        Self::Human,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Coclinician => "coclinician",
            Self::CoclinicianNoPlanner => "coclinician_no_planner",
            Self::ComparatorRealtime => "comparator_realtime",
            Self::Human => "human",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown arm `{s}`"))
    }
}

fn default_grace() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub scenario_id: ScenarioId,
    pub arm: Arm,
    pub max_duration_ms: u64,
    /// Talker chunks still accepted after a barge-in.
    #[serde(default = "default_grace")]
    pub barge_in_grace: u32,
    /// Client-chosen name; a hub refuses to open two sessions on one handle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<ActorId>,
}

impl SessionConfig {
    pub fn new(scenario_id: impl Into<ScenarioId>, arm: Arm, max_duration_ms: u64) -> Self {
        Self {
            scenario_id: scenario_id.into(),
            arm,
            max_duration_ms,
            barge_in_grace: default_grace(),
            handle: None,
            actor: None,
        }
    }

    pub fn with_grace(mut self, grace: u32) -> Self {
        self.barge_in_grace = grace;
        self
    }

    pub fn with_actor(mut self, actor: impl Into<ActorId>) -> Self {
        self.actor = Some(actor.into());
        self
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.max_duration_ms == 0 {
            return Err(SessionError::InvalidConfig(
                "max_duration_ms must be positive".into(),
            ));
        }
        if self.scenario_id.as_str().is_empty() {
            return Err(SessionError::InvalidConfig("scenario_id is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(ScenarioId),
    #[error("a session is already open on handle `{0}`")]
    DuplicateHandle(String),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("closed session {0}")]
    Closed(SessionId),
    #[error("session {0} exceeded its maximum duration")]
    TimedOut(SessionId),
    #[error("double close of session {0}")]
    DoubleClose(SessionId),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("chunk {index} of utterance {utterance} rejected after barge-in")]
    ChunkRejected { utterance: u32, index: u32 },
    #[error("directive submitted while talker utterance {0} is in progress")]
    MidUtterance(u32),
    #[error("no pending truncation")]
    NoPendingTruncation,
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Open,
    /// A close or timeout frame was logged; the trace has not been taken yet.
    Ended,
    Closed,
}

/// Outcome of cutting a talker utterance short.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationRecord {
    pub utterance: Option<u32>,
    pub accepted: u32,
    pub rejected: u32,
    /// Chunks flagged `truncated`: 1 when the grace ran out, else 0.
    pub marked: u32,
    pub truncated_seq: Option<Seq>,
}

/// Callback invoked with every frame appended to a session.
pub type Listener = Arc<dyn Fn(&EventFrame) + Send + Sync>;

#[derive(Debug, Clone, Copy)]
struct OpenUtterance {
    utterance: u32,
    last_index: u32,
}

pub struct Session {
    id: SessionId,
    config: SessionConfig,
    clock: SharedClock,
    opened_at: u64,
    frames: Vec<EventFrame>,
    turn: TurnState,
    lifecycle: Lifecycle,
    /// Chunks still allowed while a truncation is pending.
    grace_left: Option<u32>,
    open_utterance: Option<OpenUtterance>,
    last_utterance: Option<u32>,
    deferred: VecDeque<Directive>,
    listeners: Vec<Listener>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("config", &self.config)
            .field("frames", &self.frames.len())
            .field("turn", &self.turn)
            .field("lifecycle", &self.lifecycle)
            .finish()
    }
}

impl Session {
    /// Opens a standalone session. Scenario resolution is the caller's job;
    /// [`SessionHub::open_session`] does it against its registry.
    pub fn open(config: SessionConfig, clock: SharedClock) -> Result<Self, SessionError> {
        config.validate()?;
        let opened_at = clock.now_ms();
        Ok(Self {
            id: SessionId::fresh(),
            config,
            clock,
            opened_at,
            frames: Vec::new(),
            turn: TurnState::IDLE,
            lifecycle: Lifecycle::Open,
            grace_left: None,
            open_utterance: None,
            last_utterance: None,
            deferred: VecDeque::new(),
            listeners: Vec::new(),
        })
    }

    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn frames(&self) -> &[EventFrame] {
        &self.frames
    }

    pub fn turn(&self) -> TurnState {
        self.turn
    }

    pub fn lifecycle(&self) -> Lifecycle {
        self.lifecycle
    }

    pub fn is_open(&self) -> bool {
        self.lifecycle == Lifecycle::Open
    }

    /// Milliseconds since the session was opened.
    pub fn elapsed_ms(&self) -> u64 {
        self.clock.now_ms().saturating_sub(self.opened_at)
    }

    /// Utterance index the talker should use for its next utterance.
    pub fn next_utterance(&self) -> u32 {
        self.last_utterance.map_or(0, |u| u + 1)
    }

    /// Index of the talker utterance currently in progress, if any.
    pub fn utterance_in_progress(&self) -> Option<u32> {
        self.open_utterance.map(|u| u.utterance)
    }

    pub fn deferred_directives(&self) -> usize {
        self.deferred.len()
    }

    pub fn subscribe(&mut self, listener: Listener) {
        self.listeners.push(listener);
    }

    /// Logs a timeout if the clock has run past the maximum duration.
    /// Returns whether the session has timed out.
    pub fn check_timeout(&mut self) -> bool {
        if self.lifecycle != Lifecycle::Open || self.elapsed_ms() <= self.config.max_duration_ms {
            return false;
        }
        let ts = self.config.max_duration_ms.max(self.last_ts());
        self.append(FrameBody::control(ControlAction::Timeout), ts, false);
        true
    }

    /// Appends a client-submitted frame and returns its seq.
    pub fn submit(&mut self, body: FrameBody) -> Result<Seq, SessionError> {
        self.ensure_open()?;
        body.validate().map_err(SessionError::Malformed)?;
        if let FrameBody::SessionControl(Control {
            action: ControlAction::Timeout,
        }) = body
        {
            return Err(SessionError::Malformed(
                "timeout is issued by the session, not a client".into(),
            ));
        }
        let mut truncated = false;
        match &body {
            FrameBody::TalkerUtteranceChunk(chunk) => truncated = self.admit_chunk(chunk)?,
            FrameBody::DirectiveInjected(_) => {
                if let Some(open) = self.open_utterance {
                    return Err(SessionError::MidUtterance(open.utterance));
                }
            }
            _ => {}
        }
        let ts = self.elapsed_ms().max(self.last_ts());
        Ok(self.append(body, ts, truncated))
    }

    /// Logs a directive now if the talker is between utterances, otherwise
    /// holds it until the talker's current utterance ends. Returns the seq
    /// when logged immediately.
    pub fn post_directive(&mut self, directive: Directive) -> Result<Option<Seq>, SessionError> {
        self.ensure_open()?;
        if self.open_utterance.is_some() {
            self.deferred.push_back(directive);
            return Ok(None);
        }
        self.submit(FrameBody::DirectiveInjected(directive))
            .map(Some)
    }

    /// Pushes the talker's remaining in-flight chunks through the truncation
    /// gate after a barge-in, then ends the talker's utterance.
    pub fn apply_barge_in(
        &mut self,
        in_flight: Vec<TalkerChunk>,
    ) -> Result<TruncationRecord, SessionError> {
        self.ensure_open()?;
        if !self.turn.pending_truncation() {
            return Err(SessionError::NoPendingTruncation);
        }
        let mut record = TruncationRecord {
            utterance: self.open_utterance.map(|u| u.utterance),
            ..TruncationRecord::default()
        };
        for chunk in in_flight {
            match self.submit(FrameBody::TalkerUtteranceChunk(chunk)) {
                Ok(seq) => {
                    record.accepted += 1;
                    if self.frames[seq as usize].truncated {
                        record.marked += 1;
                        record.truncated_seq = Some(seq);
                    }
                }
                Err(SessionError::ChunkRejected { .. }) => record.rejected += 1,
                Err(e) => return Err(e),
            }
        }
        self.submit(FrameBody::control(ControlAction::TalkerDone))?;
        Ok(record)
    }

    /// Freezes the session and returns its trace. A session that overran its
    /// maximum duration gets a timeout frame first.
    pub fn close(&mut self) -> Result<EncounterTrace, SessionError> {
        if self.lifecycle == Lifecycle::Closed {
            return Err(SessionError::DoubleClose(self.id));
        }
        self.check_timeout();
        let duration_ms = self
            .elapsed_ms()
            .min(self.config.max_duration_ms)
            .max(self.last_ts());
        self.lifecycle = Lifecycle::Closed;
        self.deferred.clear();
        let header = TraceHeader {
            scenario: self.config.scenario_id.clone(),
            arm: self.config.arm,
            actor: self
                .config
                .actor
                .clone()
                .unwrap_or_else(|| ActorId::new("unassigned")),
            started_at: self.opened_at,
            duration_ms,
        };
        EncounterTrace::new(header, self.frames.clone()).map_err(|e| {
            SessionError::Malformed(format!("session log failed trace validation: {e}"))
        })
    }

    fn ensure_open(&mut self) -> Result<(), SessionError> {
        match self.lifecycle {
            Lifecycle::Open => {}
            _ => return Err(SessionError::Closed(self.id)),
        }
        if self.check_timeout() {
            return Err(SessionError::TimedOut(self.id));
        }
        Ok(())
    }

    fn last_ts(&self) -> u64 {
        self.frames.last().map_or(0, |f| f.ts_ms)
    }

    /// Checks a chunk against utterance ordering and the truncation gate.
    /// Returns whether the chunk uses up the last of the grace.
    fn admit_chunk(&mut self, chunk: &TalkerChunk) -> Result<bool, SessionError> {
        match self.open_utterance {
            Some(open) if chunk.utterance == open.utterance => {
                if chunk.index <= open.last_index {
                    return Err(SessionError::Malformed(format!(
                        "chunk index {} of utterance {} does not advance past {}",
                        chunk.index, chunk.utterance, open.last_index
                    )));
                }
            }
            Some(open) => {
                return Err(SessionError::Malformed(format!(
                    "chunk for utterance {} while utterance {} is still in progress",
                    chunk.utterance, open.utterance
                )));
            }
            None => {
                if self
                    .last_utterance
                    .is_some_and(|last| chunk.utterance <= last)
                {
                    return Err(SessionError::Malformed(format!(
                        "utterance index {} does not advance past {}",
                        chunk.utterance,
                        self.last_utterance.unwrap_or_default()
                    )));
                }
            }
        }
        match self.grace_left {
            None => Ok(false),
            Some(0) => Err(SessionError::ChunkRejected {
                utterance: chunk.utterance,
                index: chunk.index,
            }),
            Some(n) => {
                self.grace_left = Some(n - 1);
                Ok(n == 1)
            }
        }
    }

    fn append(&mut self, body: FrameBody, ts_ms: u64, truncated: bool) -> Seq {
        let seq = self.frames.len() as Seq;
        let step = step_turn_state(self.turn, TurnEvent::of(&body));
        self.turn = step.state;
        if step.action == TurnAction::TruncateTalker {
            self.grace_left = Some(self.config.barge_in_grace);
        }
        let mut flush = false;
        match &body {
            FrameBody::TalkerUtteranceChunk(c) => {
                self.open_utterance = Some(OpenUtterance {
                    utterance: c.utterance,
                    last_index: c.index,
                });
                self.last_utterance = Some(c.utterance);
            }
            FrameBody::SessionControl(c) => match c.action {
                ControlAction::TalkerDone => {
                    self.open_utterance = None;
                    self.grace_left = None;
                    flush = true;
                }
                ControlAction::Close | ControlAction::Timeout => {
                    self.open_utterance = None;
                    self.grace_left = None;
                    self.deferred.clear();
                    self.lifecycle = Lifecycle::Ended;
                }
                ControlAction::PatientDone => {}
            },
            _ => {}
        }
        let frame = EventFrame {
            seq,
            ts_ms,
            body,
            truncated,
        };
        for listener in &self.listeners {
            listener(&frame);
        }
        self.frames.push(frame);
        if flush {
            while let Some(directive) = self.deferred.pop_front() {
                self.append(FrameBody::DirectiveInjected(directive), ts_ms, false);
            }
        }
        seq
    }
}
