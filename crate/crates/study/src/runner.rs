//! Batch execution: one encounter per plan entry, with retry, persistence and
//! autograding, actors in parallel and each actor's entries in order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use telesim_core::encounter::{run_encounter as run_session, EncounterSetup, Pacing};
use telesim_core::ids::FindingId;
use telesim_core::patient::ScenarioScript;
use telesim_core::scoring::{aggregate, autograde, ScoreSheet};
use telesim_core::session::{Arm, SessionConfig};
use telesim_core::talker::{
    Persona, RemoteBackend, ResponderBackend, ScriptedBackend, TalkerScript,
};
use telesim_core::trace::EncounterTrace;
use thiserror::Error;

use crate::config::{BackendConfig, StudyConfig};
use crate::plan::{Assignment, StudyPlan};
use crate::store::ScenarioStore;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("{failed} of {total} encounters failed, above the configured limit")]
    TooManyFailures {
        failed: usize,
        total: usize,
        records: Vec<RunRecord>,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("backend for {arm}: {message}")]
    Backend { arm: Arm, message: String },
    #[error("records file: {0}")]
    Records(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// Succeeded after at least one failed attempt.
    Repeated,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub entry: Assignment,
    pub encounter_id: String,
    /// Relative to the study output directory.
    pub trace_path: Option<PathBuf>,
    pub sheet_path: Option<PathBuf>,
    pub status: RunStatus,
    pub repeat_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.status != RunStatus::Failed
    }
}

/// Where the talker for an arm comes from.
#[derive(Clone)]
pub enum TalkerSource {
    /// The store's script for the arm.
    StoreDefault,
    Script(TalkerScript),
    Backend {
        backend: Arc<dyn ResponderBackend>,
        persona: Persona,
    },
    Live {
        queue: Arc<LiveQueue>,
        timeout: Duration,
    },
}

#[derive(Clone, Default)]
pub struct Backends {
    arms: BTreeMap<Arm, TalkerSource>,
}

impl Backends {
    pub fn from_config(
        config: &StudyConfig,
        queue: Option<Arc<LiveQueue>>,
    ) -> Result<Self, StudyError> {
        let mut out = Self::default();
        for arm in Arm::ALL {
            let source = match config.backend(arm) {
                BackendConfig::Scripted => TalkerSource::StoreDefault,
                BackendConfig::ScriptFile { path } => {
                    let text = fs::read_to_string(&path)
                        .map_err(|source| StudyError::Io { path, source })?;
                    let script = TalkerScript::parse(&text).map_err(|e| StudyError::Backend {
                        arm,
                        message: e.to_string(),
                    })?;
                    TalkerSource::Script(script)
                }
                BackendConfig::Remote { .. } => {
                    let remote = config.backend(arm).remote(arm).expect("remote variant");
                    TalkerSource::Backend {
                        persona: Persona {
                            name: remote.name.clone(),
                            style: String::new(),
                        },
                        backend: Arc::new(RemoteBackend::new(remote)),
                    }
                }
                BackendConfig::Live { timeout_s } => TalkerSource::Live {
                    queue: queue.clone().ok_or_else(|| StudyError::Backend {
                        arm,
                        message: "live backend needs the session service".into(),
                    })?,
                    timeout: Duration::from_secs(timeout_s),
                },
            };
            out.set(arm, source);
        }
        Ok(out)
    }

    pub fn set(&mut self, arm: Arm, source: TalkerSource) {
        self.arms.insert(arm, source);
    }

    pub fn source(&self, arm: Arm) -> &TalkerSource {
        self.arms.get(&arm).unwrap_or(&TalkerSource::StoreDefault)
    }
}

pub struct RunContext<'a> {
    pub store: &'a ScenarioStore,
    pub backends: Backends,
    pub config: StudyConfig,
    pub out_dir: PathBuf,
}

/// Encounters waiting for a live session, keyed by encounter id.
#[derive(Default)]
pub struct LiveQueue {
    state: Mutex<LiveState>,
    changed: Condvar,
}

#[derive(Default)]
struct LiveState {
    waiting: BTreeMap<String, Assignment>,
    done: HashMap<String, EncounterTrace>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LiveError {
    #[error("no encounter `{0}` is waiting for a live session")]
    NotWaiting(String),
    #[error("trace is for {got}, expected {expected}")]
    Mismatch { got: String, expected: String },
}

impl LiveQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pending(&self) -> Vec<Assignment> {
        self.state.lock().waiting.values().cloned().collect()
    }

    pub fn is_waiting(&self, encounter_id: &str) -> bool {
        self.state.lock().waiting.contains_key(encounter_id)
    }

    /// Blocks until a live session delivers the trace for `entry`.
    pub fn wait_for(&self, entry: &Assignment, timeout: Duration) -> Option<EncounterTrace> {
        let id = entry.encounter_id();
        let mut state = self.state.lock();
        state.waiting.insert(id.clone(), entry.clone());
        self.changed.notify_all();
        let deadline = std::time::Instant::now() + timeout;
        loop {
            if let Some(trace) = state.done.remove(&id) {
                return Some(trace);
            }
            if self.changed.wait_until(&mut state, deadline).timed_out() {
                state.waiting.remove(&id);
                return state.done.remove(&id);
            }
        }
    }

    /// Waits until `encounter_id` is queued.
    pub fn wait_pending(&self, encounter_id: &str, timeout: Duration) -> Option<Assignment> {
        let mut state = self.state.lock();
        let deadline = std::time::Instant::now() + timeout;
        loop {
            if let Some(a) = state.waiting.get(encounter_id) {
                return Some(a.clone());
            }
            if self.changed.wait_until(&mut state, deadline).timed_out() {
                return None;
            }
        }
    }

    pub fn fulfil(&self, encounter_id: &str, trace: EncounterTrace) -> Result<(), LiveError> {
        let mut state = self.state.lock();
        let entry = state
            .waiting
            .get(encounter_id)
            .ok_or_else(|| LiveError::NotWaiting(encounter_id.to_owned()))?;
        let h = trace.header();
        if h.scenario.as_str() != entry.scenario
            || h.arm != entry.arm
            || h.actor.as_str() != entry.actor
        {
            return Err(LiveError::Mismatch {
                got: format!("{}/{}/{}", h.actor, h.scenario, h.arm),
                expected: format!("{}/{}/{}", entry.actor, entry.scenario, entry.arm),
            });
        }
        state.waiting.remove(encounter_id);
        state.done.insert(encounter_id.to_owned(), trace);
        self.changed.notify_all();
        Ok(())
    }
}

/// Facts an actor withholds on first request in one scenario. Depends only on
/// (seed, actor, scenario), so every arm meets the same actor behaviour.
pub fn hesitant_facts(
    seed: u64,
    actor: &str,
    scenario: &ScenarioScript,
    rate: f64,
) -> BTreeSet<FindingId> {
    if rate <= 0.0 {
        return BTreeSet::new();
    }
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(actor.as_bytes());
    h.update([0]);
    h.update(scenario.id.as_str().as_bytes());
    let digest = h.finalize();
    let mut rng =
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")));
    scenario
        .facts
        .iter()
        .filter(|_| rng.random_bool(rate))
        .map(|f| f.finding.clone())
        .collect()
}

fn talker_for(
    source: &TalkerSource,
    store: &ScenarioStore,
    arm: Arm,
    human_script: &TalkerScript,
) -> (Arc<dyn ResponderBackend>, Persona) {
    let scripted = |s: &TalkerScript| -> (Arc<dyn ResponderBackend>, Persona) {
        (Arc::new(ScriptedBackend::new(s.clone())), s.persona.clone())
    };
    match source {
        TalkerSource::Script(s) => scripted(s),
        TalkerSource::Backend { backend, persona } => (backend.clone(), persona.clone()),
        TalkerSource::StoreDefault | TalkerSource::Live { .. } => match arm {
            Arm::Coclinician | Arm::CoclinicianNoPlanner => scripted(&store.generic_talker),
            Arm::ComparatorRealtime => scripted(&store.comparator_talker),
            Arm::Human => scripted(human_script),
        },
    }
}

/// Session wiring for one plan entry.
pub fn encounter_setup(entry: &Assignment, ctx: &RunContext<'_>) -> Result<EncounterSetup, String> {
    let case = ctx.store.case(&entry.scenario).map_err(|e| e.to_string())?;
    let (talker, persona) = talker_for(
        ctx.backends.source(entry.arm),
        ctx.store,
        entry.arm,
        &case.human_talker,
    );
    let cfg = &ctx.config;
    Ok(EncounterSetup {
        config: SessionConfig::new(entry.scenario.as_str(), entry.arm, cfg.max_duration_ms)
            .with_actor(entry.actor.as_str())
            .with_grace(cfg.barge_in_grace),
        script: case.script.clone(),
        planner: (entry.arm == Arm::Coclinician).then(|| case.planner.clone()),
        talker,
        persona,
        max_turns: cfg.max_turns,
        pacing: Pacing::default(),
        hesitant: hesitant_facts(cfg.seed, &entry.actor, &case.script, cfg.hesitancy),
    })
}

fn attempt(entry: &Assignment, ctx: &RunContext<'_>) -> Result<EncounterTrace, String> {
    if let TalkerSource::Live { queue, timeout } = ctx.backends.source(entry.arm) {
        return queue
            .wait_for(entry, *timeout)
            .ok_or_else(|| format!("no live session fulfilled {} in time", entry.encounter_id()));
    }
    let setup = encounter_setup(entry, ctx)?;
    run_session(&setup)
        .map(|o| o.trace)
        .map_err(|e| e.to_string())
}

/// Runs one plan entry, retrying failed attempts up to the configured limit,
/// then persists and autogrades the trace.
pub fn run_encounter(entry: &Assignment, ctx: &RunContext<'_>) -> RunRecord {
    let encounter_id = entry.encounter_id();
    let mut record = RunRecord {
        entry: entry.clone(),
        encounter_id: encounter_id.clone(),
        trace_path: None,
        sheet_path: None,
        status: RunStatus::Failed,
        repeat_count: 0,
        error: None,
    };
    let live = matches!(ctx.backends.source(entry.arm), TalkerSource::Live { .. });
    let max_attempts = if live { 1 } else { 1 + ctx.config.retries };
    let mut trace = None;
    for n in 0..max_attempts {
        record.repeat_count = n;
        match attempt(entry, ctx) {
            Ok(t) => {
                trace = Some(t);
                break;
            }
            Err(e) => {
                tracing::warn!(encounter = %encounter_id, attempt = n + 1, "encounter failed: {e}");
                record.error = Some(e);
            }
        }
    }
    let Some(trace) = trace else {
        return record;
    };
    match persist(&encounter_id, &trace, entry, ctx) {
        Ok((trace_path, sheet_path)) => {
            record.trace_path = Some(trace_path);
            record.sheet_path = Some(sheet_path);
            record.status = if record.repeat_count > 0 {
                RunStatus::Repeated
            } else {
                RunStatus::Ok
            };
            record.error = None;
        }
        Err(e) => record.error = Some(e),
    }
    record
}

fn persist(
    id: &str,
    trace: &EncounterTrace,
    entry: &Assignment,
    ctx: &RunContext<'_>,
) -> Result<(PathBuf, PathBuf), String> {
    let case = ctx.store.case(&entry.scenario).map_err(|e| e.to_string())?;
    let sheet = autograde(trace, &case.rubric).map_err(|e| e.to_string())?;
    aggregate(&sheet, &case.rubric, ctx.config.analysis.likert).map_err(|e| e.to_string())?;
    let trace_rel = PathBuf::from("traces").join(format!("{id}.jsonl"));
    let sheet_rel = PathBuf::from("sheets").join(format!("{id}.json"));
    write_file(&ctx.out_dir.join(&trace_rel), &trace.to_bytes())?;
    write_file(&ctx.out_dir.join(&sheet_rel), &sheet_json(&sheet))?;
    Ok((trace_rel, sheet_rel))
}

pub fn sheet_json(sheet: &ScoreSheet) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(sheet).expect("sheet serializes");
    out.push(b'\n');
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), String> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

/// Runs the whole plan. Actors run in parallel; one actor's entries run in
/// plan order. Records come back in plan order and are written to
/// `records.json`, with a line per encounter appended to `progress.log`.
pub fn run_study(plan: &StudyPlan, ctx: &RunContext<'_>) -> Result<Vec<RunRecord>, StudyError> {
    fs::create_dir_all(&ctx.out_dir).map_err(|source| StudyError::Io {
        path: ctx.out_dir.clone(),
        source,
    })?;
    let log_path = ctx.out_dir.join("progress.log");
    let log = Mutex::new(BufWriter::new(File::create(&log_path).map_err(
        |source| StudyError::Io {
            path: log_path.clone(),
            source,
        },
    )?));
    let total = plan.assignments.len();
    let done = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let limit = ctx.config.max_failure_fraction * total as f64;

    let per_actor: Vec<Vec<RunRecord>> = plan
        .actors()
        .par_iter()
        .map(|actor| {
            let mut out = Vec::new();
            for entry in plan.actor_queue(actor) {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let record = run_encounter(entry, ctx);
                let n = done.fetch_add(1, Ordering::SeqCst) + 1;
                let _ = writeln!(
                    log.lock(),
                    "[{n}/{total}] {} {:?} repeats={}",
                    record.encounter_id,
                    record.status,
                    record.repeat_count
                );
                tracing::info!(encounter = %record.encounter_id, status = ?record.status, "{n}/{total}");
                if record.status == RunStatus::Failed && (failed.fetch_add(1, Ordering::SeqCst) + 1) as f64 > limit {
                    abort.store(true, Ordering::SeqCst);
                }
                out.push(record);
            }
            out
        })
        .collect();
    let _ = log.lock().flush();

    let position: HashMap<String, usize> = plan
        .assignments
        .iter()
        .enumerate()
        .map(|(i, a)| (a.encounter_id(), i))
        .collect();
    let mut records: Vec<RunRecord> = per_actor.into_iter().flatten().collect();
    records.sort_by_key(|r| position[&r.encounter_id]);
    write_records(&ctx.out_dir, &records)?;

    let failed = failed.load(Ordering::SeqCst);
    if abort.load(Ordering::SeqCst) {
        return Err(StudyError::TooManyFailures {
            failed,
            total,
            records,
        });
    }
    Ok(records)
}

pub fn write_records(dir: &Path, records: &[RunRecord]) -> Result<(), StudyError> {
    let path = dir.join("records.json");
    let mut bytes = serde_json::to_vec_pretty(records).expect("records serialize");
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|source| StudyError::Io { path, source })
}

pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>, StudyError> {
    let path = dir.join("records.json");
    let text = fs::read_to_string(&path).map_err(|source| StudyError::Io { path, source })?;
    serde_json::from_str(&text).map_err(|e| StudyError::Records(e.to_string()))
}
