//! Streaming an [`UtterancePlan`] into a session.

use std::collections::VecDeque;

use super::{TalkerError, UtterancePlan};
use crate::evidence::EvidenceTag;
use crate::session::{
    CaptureRequest, ControlAction, FrameBody, FrameKind, Observation, Seq, Session, TalkerChunk,
    TruncationRecord, VisibleSign,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmitStep {
    Chunk(Seq),
    CaptureRequested {
        seq: Seq,
        request: u32,
    },
    /// A barge-in cut the utterance short; the turn is over.
    Truncated(TruncationRecord),
    /// Talker turn ended normally.
    Finished(Seq),
    Idle,
}

/// One utterance being streamed chunk by chunk. Callers that share the
/// session with other producers lock it per [`Emission::step`], so a barge-in
/// can land between chunks.
#[derive(Debug, Clone)]
pub struct Emission {
    pending: VecDeque<TalkerChunk>,
    frame_request: bool,
    done: bool,
}

impl Emission {
    pub fn new(plan: &UtterancePlan, utterance: u32) -> Self {
        let pending = plan
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let index = i as u32;
                let id = TalkerChunk::assertion_id(utterance, index);
                TalkerChunk {
                    utterance,
                    index,
                    text: c.text.clone(),
                    cites: c
                        .cites
                        .iter()
                        .map(|cite| EvidenceTag::from_cite(id.clone(), cite))
                        .collect(),
                }
            })
            .collect();
        Self {
            pending,
            frame_request: plan.frame_request,
            done: false,
        }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn remaining(&self) -> usize {
        self.pending.len()
    }

    pub fn step(&mut self, session: &mut Session) -> Result<EmitStep, TalkerError> {
        if self.done {
            return Ok(EmitStep::Idle);
        }
        if session.turn().pending_truncation() {
            self.done = true;
            let rest: Vec<_> = self.pending.drain(..).collect();
            return Ok(EmitStep::Truncated(session.apply_barge_in(rest)?));
        }
        if let Some(chunk) = self.pending.pop_front() {
            return Ok(EmitStep::Chunk(
                session.submit(FrameBody::TalkerUtteranceChunk(chunk))?,
            ));
        }
        if self.frame_request {
            self.frame_request = false;
            let request = session
                .frames()
                .iter()
                .filter(|f| f.kind() == FrameKind::FrameCaptureRequest)
                .count() as u32
                + 1;
            let seq = session.submit(FrameBody::FrameCaptureRequest(CaptureRequest { request }))?;
            return Ok(EmitStep::CaptureRequested { seq, request });
        }
        self.done = true;
        Ok(EmitStep::Finished(
            session.submit(FrameBody::control(ControlAction::TalkerDone))?,
        ))
    }
}

/// Streams the whole plan as the session's next utterance, followed by a
/// capture request if the plan asks for one and then the talker's end of
/// turn. Returns every step taken.
pub fn emit_plan(
    session: &mut Session,
    plan: &UtterancePlan,
) -> Result<Vec<EmitStep>, TalkerError> {
    let mut emission = Emission::new(plan, session.next_utterance());
    let mut steps = Vec::new();
    while !emission.is_done() {
        steps.push(emission.step(session)?);
    }
    Ok(steps)
}

/// Records what the camera shows for capture request `request`.
pub fn request_frame(
    session: &mut Session,
    request: u32,
    visible: impl FnOnce(u64) -> Vec<VisibleSign>,
) -> Result<Seq, TalkerError> {
    let signs = visible(session.elapsed_ms());
    Ok(session.submit(FrameBody::FrameObservation(Observation {
        request: Some(request),
        signs,
    }))?)
}
