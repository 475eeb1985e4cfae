//! The turn-taking state machine. Pure and total: every (state, event) pair
//! has a defined successor.

use serde::{Deserialize, Serialize};

use super::frame::{ControlAction, FrameBody, FrameKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    PatientTurn,
    TalkerTurn,
    /// Both sides are producing at once.
    Overlap,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Self::Idle,
        Self::PatientTurn,
        Self::TalkerTurn,
        Self::Overlap,
    ];
}

/// Phase plus the barge-in flag. The flag can only be raised in `Overlap`,
/// which the constructors enforce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTurnState")]
pub struct TurnState {
    phase: Phase,
    pending_truncation: bool,
}

#[derive(Deserialize)]
struct RawTurnState {
    phase: Phase,
    pending_truncation: bool,
}

impl TryFrom<RawTurnState> for TurnState {
    type Error = String;

    fn try_from(raw: RawTurnState) -> Result<Self, Self::Error> {
        TurnState::new(raw.phase, raw.pending_truncation).ok_or_else(|| {
            format!(
                "pending_truncation is only valid in Overlap, not {:?}",
                raw.phase
            )
        })
    }
}

impl Default for TurnState {
    fn default() -> Self {
        Self::IDLE
    }
}

impl TurnState {
    pub const IDLE: TurnState = TurnState {
        phase: Phase::Idle,
        pending_truncation: false,
    };

    /// Every reachable state.
    pub const ALL: [TurnState; 5] = [
        Self::at(Phase::Idle),
        Self::at(Phase::PatientTurn),
        Self::at(Phase::TalkerTurn),
        Self::at(Phase::Overlap),
        TurnState {
            phase: Phase::Overlap,
            pending_truncation: true,
        },
    ];

    pub fn new(phase: Phase, pending_truncation: bool) -> Option<Self> {
        (!pending_truncation || phase == Phase::Overlap).then_some(Self {
            phase,
            pending_truncation,
        })
    }

    pub const fn at(phase: Phase) -> Self {
        Self {
            phase,
            pending_truncation: false,
        }
    }

    const fn truncating() -> Self {
        Self {
            phase: Phase::Overlap,
            pending_truncation: true,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn pending_truncation(&self) -> bool {
        self.pending_truncation
    }
}

/// Input to the state machine: a frame kind, with session-control frames
/// split by action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TurnEvent {
    Frame(FrameKind),
    Control(ControlAction),
}

impl TurnEvent {
    /// Every distinct event: the eight non-control kinds and the four control actions.
    pub fn all() -> Vec<TurnEvent> {
        FrameKind::ALL
            .iter()
            .filter(|k| **k != FrameKind::SessionControl)
            .map(|k| TurnEvent::Frame(*k))
            .chain(ControlAction::ALL.iter().map(|a| TurnEvent::Control(*a)))
            .collect()
    }

    pub fn of(body: &FrameBody) -> Self {
        match body {
            FrameBody::SessionControl(c) => TurnEvent::Control(c.action),
            other => TurnEvent::Frame(other.kind()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TurnAction {
    None,
    /// The talker's current utterance must be cut short.
    TruncateTalker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub state: TurnState,
    pub action: TurnAction,
}

pub fn step_turn_state(state: TurnState, event: TurnEvent) -> Step {
    use Phase::*;

    let to = |s: TurnState| Step {
        state: s,
        action: TurnAction::None,
    };
    let pending = state.pending_truncation;
    match event {
        TurnEvent::Control(ControlAction::Close | ControlAction::Timeout) => to(TurnState::IDLE),
        TurnEvent::Control(ControlAction::PatientDone) => match state.phase {
            Idle | PatientTurn => to(TurnState::IDLE),
            TalkerTurn => to(state),
            // The truncation stays pending until the talker yields.
            Overlap if pending => to(state),
            Overlap => to(TurnState::at(TalkerTurn)),
        },
        TurnEvent::Control(ControlAction::TalkerDone) => match state.phase {
            Idle | TalkerTurn => to(TurnState::IDLE),
            PatientTurn => to(state),
            Overlap => to(TurnState::at(PatientTurn)),
        },
        TurnEvent::Frame(FrameKind::PatientUtterance) => match state.phase {
            Idle | PatientTurn => to(TurnState::at(PatientTurn)),
            TalkerTurn => to(TurnState::at(Overlap)),
            Overlap => to(state),
        },
        TurnEvent::Frame(FrameKind::TalkerUtteranceChunk) => match state.phase {
            Idle | TalkerTurn => to(TurnState::at(TalkerTurn)),
            PatientTurn => to(TurnState::at(Overlap)),
            Overlap => to(state),
        },
        TurnEvent::Frame(FrameKind::BargeIn) => match state.phase {
            Idle | PatientTurn => to(TurnState::at(PatientTurn)),
            TalkerTurn => Step {
                state: TurnState::truncating(),
                action: TurnAction::TruncateTalker,
            },
            Overlap if pending => to(state),
            Overlap => Step {
                state: TurnState::truncating(),
                action: TurnAction::TruncateTalker,
            },
        },
        // Capture requests, observations, directives, markers and goal updates
        // ride alongside speech and leave the floor as it is.
        TurnEvent::Frame(_) => to(state),
    }
}

/// Folds a sequence of events from `Idle`.
pub fn replay<'a>(events: impl IntoIterator<Item = &'a FrameBody>) -> TurnState {
    events.into_iter().fold(TurnState::IDLE, |s, body| {
        step_turn_state(s, TurnEvent::of(body)).state
    })
}
