//! Batch encounter loop: talker turn, patient turn, planner update, repeated
//! until the talker closes, the session times out or the turn budget runs out.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::FindingId;
use crate::patient::{PatientSim, ScenarioScript};
use crate::planner::{Planner, PlannerAgent, PlannerError, PlannerSnapshot};
use crate::session::{
    ControlAction, FrameBody, GoalTransition, ManualClock, Session, SessionConfig, SessionError,
    SharedClock,
};
use crate::talker::{
    compose_reply, DialogueContext, Emission, EmitStep, Persona, ResponderBackend, TalkerError,
    UtterancePlan,
};
use crate::trace::EncounterTrace;

#[derive(Debug, Error)]
pub enum EncounterError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Talker(#[from] TalkerError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

/// Simulated time each frame takes, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pacing {
    pub talker_chunk_ms: u64,
    pub patient_utterance_ms: u64,
    pub other_ms: u64,
}

impl Default for Pacing {
    fn default() -> Self {
        Self {
            talker_chunk_ms: 1_500,
            patient_utterance_ms: 3_000,
            other_ms: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ending {
    TalkerClosed,
    TimedOut,
    TurnLimit,
}

pub struct EncounterSetup {
    pub config: SessionConfig,
    pub script: Arc<ScenarioScript>,
    /// Attached for arms that use the planner.
    pub planner: Option<Arc<Planner>>,
    pub talker: Arc<dyn ResponderBackend>,
    pub persona: Persona,
    pub max_turns: u32,
    pub pacing: Pacing,
    /// Facts the patient actor withholds on the first request.
    pub hesitant: BTreeSet<FindingId>,
}

#[derive(Debug)]
pub struct EncounterOutcome {
    pub trace: EncounterTrace,
    pub ending: Ending,
    pub snapshots: Vec<PlannerSnapshot>,
}

/// The clinician half of an encounter: talker backend, optional planner and,
/// when the session runs on a stepped clock, the pacing that advances it.
/// Batch runs and live sessions drive the same steps.
pub struct ClinicianSide {
    talker: Arc<dyn ResponderBackend>,
    persona: Persona,
    agent: Option<PlannerAgent>,
    pacing: Pacing,
    clock: Option<ManualClock>,
}

/// One talker utterance being streamed.
pub struct TalkerTurn {
    pub plan: UtterancePlan,
    emission: Emission,
    /// Capture request issued at the end of the utterance.
    pub capture: Option<u32>,
    pub timed_out: bool,
}

impl Pacing {
    /// Stepped-clock advance before a patient-side frame is logged.
    pub fn patient_frame_ms(&self, body: &FrameBody) -> u64 {
        match body {
            FrameBody::PatientUtterance(_) => self.patient_utterance_ms,
            _ => self.other_ms,
        }
    }
}

impl ClinicianSide {
    pub fn new(
        talker: Arc<dyn ResponderBackend>,
        persona: Persona,
        planner: Option<Arc<Planner>>,
        pacing: Pacing,
        clock: Option<ManualClock>,
    ) -> Self {
        Self {
            talker,
            persona,
            agent: planner.map(PlannerAgent::new),
            pacing,
            clock,
        }
    }

    pub fn has_planner(&self) -> bool {
        self.agent.is_some()
    }

    pub fn tick(&self, ms: u64) {
        if let Some(clock) = &self.clock {
            clock.advance(ms);
        }
    }

    /// Asks the talker for its next utterance given the log so far.
    pub fn begin_turn(&self, session: &Session) -> Result<TalkerTurn, EncounterError> {
        let ctx = DialogueContext::new(session.frames(), &self.persona);
        let plan = compose_reply(&ctx, &ctx.pending_directives(), self.talker.as_ref())?;
        let emission = Emission::new(&plan, session.next_utterance());
        Ok(TalkerTurn {
            plan,
            emission,
            capture: None,
            timed_out: false,
        })
    }

    /// Streams one step of `turn`. Returns whether the turn has more to send.
    pub fn step(
        &self,
        turn: &mut TalkerTurn,
        session: &mut Session,
    ) -> Result<bool, EncounterError> {
        if turn.emission.is_done() || turn.timed_out {
            return Ok(false);
        }
        let pace = &self.pacing;
        self.tick(if turn.emission.remaining() > 0 {
            pace.talker_chunk_ms
        } else {
            pace.other_ms
        });
        match turn.emission.step(session) {
            Ok(EmitStep::CaptureRequested { request, .. }) => turn.capture = Some(request),
            Ok(_) => {}
            Err(TalkerError::Session(SessionError::TimedOut(_))) => {
                turn.timed_out = true;
                return Ok(false);
            }
            Err(e) => return Err(e.into()),
        }
        Ok(!turn.emission.is_done())
    }

    /// Planner update after the patient's turn: goal changes, the next
    /// directive and a snapshot. No-op without a planner.
    pub fn after_patient(&mut self, session: &mut Session) -> Result<(), EncounterError> {
        let Some(agent) = self.agent.as_mut() else {
            return Ok(());
        };
        let changes: Vec<GoalTransition> = agent.observe(session.frames())?;
        for t in changes {
            session.submit(FrameBody::GoalStateChange(t))?;
        }
        if let Some(d) = agent.next_directive() {
            session.post_directive(d)?;
        }
        agent.take_snapshot();
        Ok(())
    }

    pub fn snapshots(&self) -> &[PlannerSnapshot] {
        self.agent.as_ref().map_or(&[], |a| a.snapshots())
    }
}

/// Runs one encounter on a private manual clock.
pub fn run_encounter(setup: &EncounterSetup) -> Result<EncounterOutcome, EncounterError> {
    let clock = ManualClock::new(0);
    let shared: SharedClock = Arc::new(clock.clone());
    let mut session = Session::open(setup.config.clone(), shared)?;
    let mut patient = PatientSim::with_hesitancy(setup.script.clone(), setup.hesitant.clone());
    let mut side = ClinicianSide::new(
        setup.talker.clone(),
        setup.persona.clone(),
        setup.planner.clone(),
        setup.pacing,
        Some(clock.clone()),
    );
    let pace = setup.pacing;

    let mut ending = Ending::TurnLimit;
    for _ in 0..setup.max_turns {
        let mut turn = side.begin_turn(&session)?;
        while side.step(&mut turn, &mut session)? {}
        if !session.is_open() || session.check_timeout() {
            ending = Ending::TimedOut;
            break;
        }
        if let Some(request) = turn.capture {
            clock.advance(pace.other_ms);
            crate::talker::request_frame(&mut session, request, |t| patient.visible_state(t))?;
        }

        let reply = patient.respond(&turn.plan.text());
        let mut steps: Vec<FrameBody> = reply
            .markers
            .into_iter()
            .map(FrameBody::ManeuverMarker)
            .collect();
        steps.push(FrameBody::PatientUtterance(reply.utterance));
        steps.push(FrameBody::control(ControlAction::PatientDone));
        let mut timed_out = false;
        for body in steps {
            clock.advance(pace.patient_frame_ms(&body));
            match session.submit(body) {
                Ok(_) => {}
                Err(SessionError::TimedOut(_)) => {
                    timed_out = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if timed_out {
            ending = Ending::TimedOut;
            break;
        }

        if turn.plan.closes {
            session.submit(FrameBody::control(ControlAction::Close))?;
            ending = Ending::TalkerClosed;
            break;
        }
        side.after_patient(&mut session)?;
    }
    let trace = session.close()?;
    Ok(EncounterOutcome {
        trace,
        ending,
        snapshots: side.snapshots().to_vec(),
    })
}
