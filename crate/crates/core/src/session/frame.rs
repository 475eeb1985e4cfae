//! Event frames: the unit of the session log, the trace file and the wire
//! protocol. One frame serializes as
//! `{"seq":..,"ts_ms":..,"kind":"..","payload":{..},"truncated":true}` with
//! `truncated` omitted unless set.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::evidence::EvidenceTag;
use crate::ids::{FindingId, GoalId, ManeuverId};
use crate::planner::{Directive, GoalKind, GoalStatus};

/// Position of a frame in its session log.
pub type Seq = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameKind {
    PatientUtterance,
    TalkerUtteranceChunk,
    BargeIn,
    FrameCaptureRequest,
    FrameObservation,
    DirectiveInjected,
    ManeuverMarker,
    GoalStateChange,
    SessionControl,
}

impl FrameKind {
    pub const ALL: [FrameKind; 9] = [
        Self::PatientUtterance,
        Self::TalkerUtteranceChunk,
        Self::BargeIn,
        Self::FrameCaptureRequest,
        Self::FrameObservation,
        Self::DirectiveInjected,
        Self::ManeuverMarker,
        Self::GoalStateChange,
        Self::SessionControl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PatientUtterance => "PatientUtterance",
            Self::TalkerUtteranceChunk => "TalkerUtteranceChunk",
            Self::BargeIn => "BargeIn",
            Self::FrameCaptureRequest => "FrameCaptureRequest",
            Self::FrameObservation => "FrameObservation",
            Self::DirectiveInjected => "DirectiveInjected",
            Self::ManeuverMarker => "ManeuverMarker",
            Self::GoalStateChange => "GoalStateChange",
            Self::SessionControl => "SessionControl",
        }
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A finding the patient side annotated on its own utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportedFinding {
    pub finding: FindingId,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientUtterance {
    pub text: String,
    /// Evidence annotation supplied by the patient side. Simulated patients
    /// fill it in; live human patients usually leave it empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub findings: Vec<ReportedFinding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TalkerChunk {
    /// Index of the utterance this chunk belongs to, non-decreasing per session.
    pub utterance: u32,
    /// Position of the chunk within its utterance.
    pub index: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cites: Vec<EvidenceTag>,
}

impl TalkerChunk {
    pub fn assertion_id(utterance: u32, index: u32) -> String {
        format!("u{utterance}.c{index}")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BargeIn {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureRequest {
    pub request: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisibleSign {
    pub sign: FindingId,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<u32>,
    pub signs: Vec<VisibleSign>,
}

/// How a guided maneuver went.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManeuverResult {
    /// Performed as instructed; the scripted finding was shown.
    Finding,
    /// Performed, but not held long enough to show the finding.
    Brief,
    /// The patient asked what to do.
    Clarification,
    /// The instruction could not be followed as given.
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManeuverMarker {
    pub maneuver: ManeuverId,
    pub result: ManeuverResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_s: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finding: Option<FindingId>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalTransition {
    pub goal: GoalId,
    pub kind: GoalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<GoalStatus>,
    pub to: GoalStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    /// The patient finished speaking.
    PatientDone,
    /// The talker finished (or abandoned) its utterance.
    TalkerDone,
    Close,
    Timeout,
}

impl ControlAction {
    pub const ALL: [ControlAction; 4] = [
        Self::PatientDone,
        Self::TalkerDone,
        Self::Close,
        Self::Timeout,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Control {
    pub action: ControlAction,
}

/// Kind plus kind-specific payload. This is also what clients submit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum FrameBody {
    PatientUtterance(PatientUtterance),
    TalkerUtteranceChunk(TalkerChunk),
    BargeIn(BargeIn),
    FrameCaptureRequest(CaptureRequest),
    FrameObservation(Observation),
    DirectiveInjected(Directive),
    ManeuverMarker(ManeuverMarker),
    GoalStateChange(GoalTransition),
    SessionControl(Control),
}

impl FrameBody {
    pub fn kind(&self) -> FrameKind {
        match self {
            Self::PatientUtterance(_) => FrameKind::PatientUtterance,
            Self::TalkerUtteranceChunk(_) => FrameKind::TalkerUtteranceChunk,
            Self::BargeIn(_) => FrameKind::BargeIn,
            Self::FrameCaptureRequest(_) => FrameKind::FrameCaptureRequest,
            Self::FrameObservation(_) => FrameKind::FrameObservation,
            Self::DirectiveInjected(_) => FrameKind::DirectiveInjected,
            Self::ManeuverMarker(_) => FrameKind::ManeuverMarker,
            Self::GoalStateChange(_) => FrameKind::GoalStateChange,
            Self::SessionControl(_) => FrameKind::SessionControl,
        }
    }

    pub fn control(action: ControlAction) -> Self {
        Self::SessionControl(Control { action })
    }

    pub fn patient(text: impl Into<String>) -> Self {
        Self::PatientUtterance(PatientUtterance {
            text: text.into(),
            findings: Vec::new(),
        })
    }

    /// Checks payload content the type system does not capture.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Self::PatientUtterance(u) if u.text.trim().is_empty() => {
                Err("patient utterance text is empty".into())
            }
            Self::TalkerUtteranceChunk(c) => {
                if c.text.trim().is_empty() {
                    return Err("talker chunk text is empty".into());
                }
                let expected = TalkerChunk::assertion_id(c.utterance, c.index);
                for tag in &c.cites {
                    if !tag.is_well_formed() {
                        return Err(format!(
                            "evidence tag for `{}` has source {} but supporting_frame {:?}",
                            tag.finding,
                            tag.source.as_str(),
                            tag.supporting_frame
                        ));
                    }
                    if tag.assertion_id != expected {
                        return Err(format!(
                            "evidence tag assertion id `{}` does not match chunk `{expected}`",
                            tag.assertion_id
                        ));
                    }
                }
                Ok(())
            }
            Self::DirectiveInjected(d) if d.instruction.trim().is_empty() => {
                Err("directive instruction is empty".into())
            }
            Self::ManeuverMarker(m)
                if m.result == ManeuverResult::Finding && m.finding.is_none() =>
            {
                Err("maneuver marker with result `finding` names no finding".into())
            }
            _ => Ok(()),
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFrame {
    pub seq: Seq,
    pub ts_ms: u64,
    #[serde(flatten)]
    pub body: FrameBody,
    #[serde(default, skip_serializing_if = "is_false")]
    pub truncated: bool,
}

impl EventFrame {
    pub fn kind(&self) -> FrameKind {
        self.body.kind()
    }

    pub fn as_chunk(&self) -> Option<&TalkerChunk> {
        match &self.body {
            FrameBody::TalkerUtteranceChunk(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_patient(&self) -> Option<&PatientUtterance> {
        match &self.body {
            FrameBody::PatientUtterance(u) => Some(u),
            _ => None,
        }
    }

    pub fn control_action(&self) -> Option<ControlAction> {
        match &self.body {
            FrameBody::SessionControl(c) => Some(c.action),
            _ => None,
        }
    }

    /// Whether this frame is direct evidence of `finding` for the given source
    /// class: a patient utterance annotated with it, or a captured frame or
    /// maneuver marker showing it.
    pub fn evidences(&self, finding: &FindingId) -> Option<crate::evidence::SourceClass> {
        use crate::evidence::SourceClass;
        match &self.body {
            FrameBody::PatientUtterance(u) if u.findings.iter().any(|f| &f.finding == finding) => {
                Some(SourceClass::PatientReported)
            }
            FrameBody::FrameObservation(o) if o.signs.iter().any(|s| &s.sign == finding) => {
                Some(SourceClass::Observed)
            }
            FrameBody::ManeuverMarker(m) if m.finding.as_ref() == Some(finding) => {
                Some(SourceClass::Observed)
            }
            _ => None,
        }
    }
}
