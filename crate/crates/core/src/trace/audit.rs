//! Contextual-completion auditing: find clinician assertions whose evidence
//! tags are not backed by an earlier observed or patient-reported frame.
//!
//! An assertion is a talker chunk carrying at least one evidence tag. A tag
//! is backed when it points at an earlier frame of the right kind for its
//! source class that actually carries the finding (an annotated patient
//! utterance, a captured frame showing the sign, or a maneuver marker with
//! that finding). Inferred tags are never backed.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EncounterTrace;
use crate::evidence::{EvidenceTag, SourceClass};
use crate::ids::FindingId;
use crate::session::{EventFrame, FrameKind, Seq, TalkerChunk};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    /// Tagged as inferred and nothing earlier in the trace shows the finding.
    NeverElicited,
    /// Tagged as inferred although an earlier frame does show the finding.
    InferredDespiteEvidence,
    /// The tag points at a frame that is missing, later, of the wrong kind,
    /// or does not carry the finding.
    BadSupportingFrame,
}

impl FlagReason {
    fn describe(self) -> &'static str {
        match self {
            Self::NeverElicited => "never observed or reported",
            Self::InferredDespiteEvidence => "tagged inferred despite earlier evidence",
            Self::BadSupportingFrame => "supporting frame does not show the finding",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnsupportedCite {
    pub finding: FindingId,
    pub reason: FlagReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextualCompletion {
    pub assertion_id: String,
    pub seq: Seq,
    pub quoted_text: String,
    pub reason: String,
    pub unsupported: Vec<UnsupportedCite>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub observed: usize,
    pub patient_reported: usize,
    pub inferred: usize,
}

impl SourceCounts {
    fn bump(&mut self, source: SourceClass) {
        match source {
            SourceClass::Observed => self.observed += 1,
            SourceClass::PatientReported => self.patient_reported += 1,
            SourceClass::Inferred => self.inferred += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub contextual_completions: Vec<ContextualCompletion>,
    /// Evidence tags by declared source class.
    pub counts: SourceCounts,
    /// Talker chunks with at least one tag.
    pub assertions: usize,
    /// Talker utterances with no tag on any chunk.
    pub untagged_utterances: usize,
}

pub fn audit(trace: &EncounterTrace) -> AuditReport {
    let frames = trace.frames();
    let mut report = AuditReport::default();
    let mut tagged_utterances = BTreeSet::new();
    let mut utterances = BTreeSet::new();

    for frame in frames {
        let Some(chunk) = frame.as_chunk() else {
            continue;
        };
        utterances.insert(chunk.utterance);
        if chunk.cites.is_empty() {
            continue;
        }
        tagged_utterances.insert(chunk.utterance);
        report.assertions += 1;
        let mut unsupported = Vec::new();
        for tag in &chunk.cites {
            report.counts.bump(tag.source);
            if let Some(reason) = check_tag(frames, frame.seq, tag) {
                unsupported.push(UnsupportedCite {
                    finding: tag.finding.clone(),
                    reason,
                });
            }
        }
        if !unsupported.is_empty() {
            let reason = unsupported
                .iter()
                .map(|u| format!("{}: {}", u.finding, u.reason.describe()))
                .collect::<Vec<_>>()
                .join("; ");
            report.contextual_completions.push(ContextualCompletion {
                assertion_id: TalkerChunk::assertion_id(chunk.utterance, chunk.index),
                seq: frame.seq,
                quoted_text: chunk.text.clone(),
                reason,
                unsupported,
            });
        }
    }
    report.untagged_utterances = utterances.difference(&tagged_utterances).count();
    report
}

fn supports(frame: &EventFrame, finding: &FindingId, source: SourceClass) -> bool {
    let kind_ok = match source {
        SourceClass::Observed => matches!(
            frame.kind(),
            FrameKind::FrameObservation | FrameKind::ManeuverMarker
        ),
        SourceClass::PatientReported => frame.kind() == FrameKind::PatientUtterance,
        SourceClass::Inferred => false,
    };
    kind_ok && frame.evidences(finding) == Some(source)
}

fn check_tag(frames: &[EventFrame], at: Seq, tag: &EvidenceTag) -> Option<FlagReason> {
    match (tag.source, tag.supporting_frame) {
        (SourceClass::Inferred, _) => {
            let evidenced = frames[..at as usize]
                .iter()
                .any(|f| f.evidences(&tag.finding).is_some());
            Some(if evidenced {
                FlagReason::InferredDespiteEvidence
            } else {
                FlagReason::NeverElicited
            })
        }
        (source, Some(s)) if s < at && supports(&frames[s as usize], &tag.finding, source) => None,
        _ => Some(FlagReason::BadSupportingFrame),
    }
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.contextual_completions.is_empty()
    }

    /// Fixed-width text rendering for terminals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "assertions: {}  untagged utterances: {}  observed: {}  patient-reported: {}  inferred: {}",
            self.assertions,
            self.untagged_utterances,
            self.counts.observed,
            self.counts.patient_reported,
            self.counts.inferred
        );
        if self.contextual_completions.is_empty() {
            out.push_str("no contextual completions\n");
            return out;
        }
        let _ = writeln!(
            out,
            "{:<10} {:>5}  {:<40}  reason",
            "assertion", "seq", "text"
        );
        for c in &self.contextual_completions {
            let mut text: String = c.quoted_text.chars().take(40).collect();
            if c.quoted_text.chars().count() > 40 {
                text.pop();
                text.push('~');
            }
            let _ = writeln!(
                out,
                "{:<10} {:>5}  {:<40}  {}",
                c.assertion_id, c.seq, text, c.reason
            );
        }
        out
    }
}
