//! Evidence classes and tags linking clinician assertions to the frames that
//! support them.

use serde::{Deserialize, Serialize};

use crate::ids::FindingId;
use crate::session::Seq;

/// Where a finding came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceClass {
    /// Seen on video: a captured frame or a guided maneuver.
    Observed,
    /// Said by the patient.
    PatientReported,
    /// Neither seen nor said; concluded from context.
    Inferred,
}

impl SourceClass {
    pub const ALL: [SourceClass; 3] = [Self::Observed, Self::PatientReported, Self::Inferred];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Observed => "observed",
            Self::PatientReported => "patient-reported",
            Self::Inferred => "inferred",
        }
    }
}

/// A reference from an utterance to the finding it asserts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cite {
    pub finding: FindingId,
    pub source: SourceClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supporting_frame: Option<Seq>,
}

impl Cite {
    pub fn inferred(finding: FindingId) -> Self {
        Self {
            finding,
            source: SourceClass::Inferred,
            supporting_frame: None,
        }
    }

    pub fn supported(finding: FindingId, source: SourceClass, frame: Seq) -> Self {
        Self {
            finding,
            source,
            supporting_frame: Some(frame),
        }
    }

    /// Observed and patient-reported cites carry a frame; inferred ones never do.
    pub fn is_well_formed(&self) -> bool {
        match self.source {
            SourceClass::Inferred => self.supporting_frame.is_none(),
            _ => self.supporting_frame.is_some(),
        }
    }
}

/// A cite bound to the assertion that carries it, as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceTag {
    pub assertion_id: String,
    pub finding: FindingId,
    pub source: SourceClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supporting_frame: Option<Seq>,
}

impl EvidenceTag {
    pub fn from_cite(assertion_id: impl Into<String>, cite: &Cite) -> Self {
        Self {
            assertion_id: assertion_id.into(),
            finding: cite.finding.clone(),
            source: cite.source,
            supporting_frame: cite.supporting_frame,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match self.source {
            SourceClass::Inferred => self.supporting_frame.is_none(),
            _ => self.supporting_frame.is_some(),
        }
    }
}
