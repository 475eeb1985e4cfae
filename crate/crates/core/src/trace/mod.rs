//! Encounter traces: the frozen, validated frame log of one encounter, its
//! newline-delimited JSON file format, and the evidence auditor.
//!
//! File layout: the first line is a header record
//! `{"schema":1,"scenario":..,"arm":..,"actor":..,"started_at":..,"duration_ms":..}`,
//! followed by one event frame per line in seq order.

mod audit;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{audit, AuditReport, ContextualCompletion, FlagReason, SourceCounts};

use crate::ids::{ActorId, ScenarioId};
use crate::session::{Arm, EventFrame, FrameKind};

pub const TRACE_SCHEMA: u32 = 1;
pub const TRACE_EXTENSION: &str = "trace.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario: ScenarioId,
    pub arm: Arm,
    pub actor: ActorId,
    /// Clock reading when the session opened, in milliseconds.
    pub started_at: u64,
    pub duration_ms: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    schema: u32,
    scenario: ScenarioId,
    arm: Arm,
    actor: ActorId,
    started_at: u64,
    duration_ms: u64,
}

impl HeaderRecord {
    fn new(h: &TraceHeader) -> Self {
        Self {
            schema: TRACE_SCHEMA,
            scenario: h.scenario.clone(),
            arm: h.arm,
            actor: h.actor.clone(),
            started_at: h.started_at,
            duration_ms: h.duration_ms,
        }
    }

    fn into_header(self) -> TraceHeader {
        TraceHeader {
            scenario: self.scenario,
            arm: self.arm,
            actor: self.actor,
            started_at: self.started_at,
            duration_ms: self.duration_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("frame {index}: {message}")]
    Invalid { index: usize, message: String },
    #[error("record {record}: unsupported trace schema {found}, expected {TRACE_SCHEMA}")]
    SchemaMismatch { record: usize, found: u32 },
    #[error("record {record}: {message}")]
    Corrupt { record: usize, message: String },
    #[error("trace is empty: missing header record")]
    MissingHeader,
    #[error("i/o error: {0}")]
    Io(String),
}

/// A complete encounter. Construction checks the session-log invariants, so
/// every `EncounterTrace` in hand has contiguous seqs, non-decreasing
/// timestamps and `truncated` set only on talker chunks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncounterTrace {
    header: TraceHeader,
    frames: Vec<EventFrame>,
}

impl EncounterTrace {
    pub fn new(header: TraceHeader, frames: Vec<EventFrame>) -> Result<Self, TraceError> {
        let mut last_ts = 0;
        for (index, frame) in frames.iter().enumerate() {
            let invalid = |message: String| TraceError::Invalid { index, message };
            if frame.seq != index as u64 {
                return Err(invalid(format!("seq {} out of order", frame.seq)));
            }
            if frame.ts_ms < last_ts {
                return Err(invalid(format!(
                    "timestamp {} precedes {last_ts}",
                    frame.ts_ms
                )));
            }
            if frame.truncated && frame.kind() != FrameKind::TalkerUtteranceChunk {
                return Err(invalid(format!(
                    "truncated flag on a {} frame",
                    frame.kind()
                )));
            }
            frame.body.validate().map_err(invalid)?;
            last_ts = frame.ts_ms;
        }
        Ok(Self { header, frames })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn frames(&self) -> &[EventFrame] {
        &self.frames
    }

    pub fn into_parts(self) -> (TraceHeader, Vec<EventFrame>) {
        (self.header, self.frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn count_kind(&self, kind: FrameKind) -> usize {
        self.frames.iter().filter(|f| f.kind() == kind).count()
    }

    /// Writes the trace as NDJSON.
    pub fn export<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        let io = |e: std::io::Error| TraceError::Io(e.to_string());
        let header = HeaderRecord::new(&self.header);
        serde_json::to_writer(&mut out, &header).map_err(|e| TraceError::Io(e.to_string()))?;
        out.write_all(b"\n").map_err(io)?;
        for frame in &self.frames {
            serde_json::to_writer(&mut out, frame).map_err(|e| TraceError::Io(e.to_string()))?;
            out.write_all(b"\n").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        // Writing into a Vec cannot fail.
        let _ = self.export(&mut buf);
        buf
    }

    /// Reads an NDJSON trace. Errors name the zero-based record (line) index.
    pub fn import<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut lines = input.lines().enumerate();
        let header = loop {
            match lines.next() {
                None => return Err(TraceError::MissingHeader),
                Some((record, line)) => {
                    let line = line.map_err(|e| TraceError::Io(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break parse_header(record, &line)?;
                }
            }
        };
        let mut frames = Vec::new();
        for (record, line) in lines {
            let line = line.map_err(|e| TraceError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let frame: EventFrame =
                serde_json::from_str(&line).map_err(|e| TraceError::Corrupt {
                    record,
                    message: e.to_string(),
                })?;
            frames.push(frame);
        }
        Self::new(header, frames)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TraceError> {
        Self::import(bytes)
    }
}

fn parse_header(record: usize, line: &str) -> Result<TraceHeader, TraceError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| TraceError::Corrupt {
        record,
        message: e.to_string(),
    })?;
    match value.get("schema").and_then(|v| v.as_u64()) {
        Some(s) if s == TRACE_SCHEMA as u64 => {}
        Some(s) => {
            return Err(TraceError::SchemaMismatch {
                record,
                found: s as u32,
            })
        }
        None => {
            return Err(TraceError::Corrupt {
                record,
                message: "header record has no `schema` field".into(),
            })
        }
    }
    let parsed: HeaderRecord = serde_json::from_value(value).map_err(|e| TraceError::Corrupt {
        record,
        message: e.to_string(),
    })?;
    Ok(parsed.into_header())
}
