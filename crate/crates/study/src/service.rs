//! Live session service.
//!
//! `POST /sessions` opens a session and, for arms with a talker, starts a
//! driver thread that runs the same clinician steps as batch mode. Clients
//! attach to `/sessions/{id}/stream` over WebSocket: they receive every frame
//! as JSON and submit patient-side frames in the same schema. The stream
//! defaults to the patient view, which hides planner frames so the actor
//! cannot tell the arms apart; `?view=operator` shows everything.
//! `?after=<seq>` resumes a dropped stream.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::json;
use telesim_core::encounter::{ClinicianSide, Pacing};
use telesim_core::ids::EncounterId;
use telesim_core::planner::PlannerSnapshot;
use telesim_core::scoring::{
    aggregate, autograde, EncounterRef, EncounterScore, Rater, ScoreSheet, UniversalCriterion,
};
use telesim_core::session::{
    Arm, ControlAction, EventFrame, FrameBody, FrameKind, ManualClock, SessionConfig, SessionError,
    SessionHub, SessionId, SharedClock, SystemClock,
};
use telesim_core::trace::{audit, EncounterTrace};
use tokio::sync::mpsc;

use crate::analyze::manual_sheet_path;
use crate::config::StudyConfig;
use crate::runner::{encounter_setup, sheet_json, Backends, LiveQueue, RunContext};
use crate::store::ScenarioStore;

pub struct ServiceState {
    hub: SessionHub,
    store: Arc<ScenarioStore>,
    config: StudyConfig,
    backends: Backends,
    sessions: Mutex<HashMap<SessionId, Arc<LiveSession>>>,
    queue: Option<Arc<LiveQueue>>,
    /// Study directory that receives manual sheets for plan encounters.
    out_dir: Option<PathBuf>,
}

struct LiveSession {
    id: SessionId,
    scenario: String,
    arm: Arm,
    actor: String,
    clock: Option<ManualClock>,
    pacing: Pacing,
    /// Plan entry this session stands in for.
    fulfils: Option<String>,
    snapshots: Mutex<Vec<PlannerSnapshot>>,
    trace: Mutex<Option<EncounterTrace>>,
    scores: Mutex<Vec<ScoreSubmission>>,
    /// Bumped on every client frame; the driver waits on it.
    activity: (Mutex<u64>, Condvar),
}

impl LiveSession {
    fn poke(&self) {
        *self.activity.0.lock() += 1;
        self.activity.1.notify_all();
    }

    fn wait_activity(&self, seen: u64, timeout: Duration) -> u64 {
        let mut n = self.activity.0.lock();
        if *n == seen {
            self.activity.1.wait_for(&mut n, timeout);
        }
        *n
    }
}

#[derive(Debug, Clone, Serialize)]
struct ScoreSubmission {
    score_id: u32,
    rater: String,
    sheet: ScoreSheet,
    superseded_by: Option<u32>,
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub scenario: Option<String>,
    pub arm: Option<Arm>,
    pub actor: Option<String>,
    /// Encounter id of a plan entry waiting for a live session.
    pub fulfils: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ScoreForm {
    pub rater: String,
    pub items: BTreeMap<String, u8>,
    #[serde(default)]
    pub universal: BTreeMap<UniversalCriterion, u8>,
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    after: Option<u64>,
    view: Option<String>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::UnknownSession(_) | SessionError::UnknownScenario(_) => {
                StatusCode::NOT_FOUND
            }
            SessionError::Closed(_)
            | SessionError::TimedOut(_)
            | SessionError::DoubleClose(_)
            | SessionError::DuplicateHandle(_)
            | SessionError::MidUtterance(_)
            | SessionError::NoPendingTruncation
            | SessionError::ChunkRejected { .. } => StatusCode::CONFLICT,
            SessionError::Malformed(_) | SessionError::InvalidConfig(_) => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

impl ServiceState {
    pub fn new(
        store: Arc<ScenarioStore>,
        config: StudyConfig,
        backends: Backends,
        queue: Option<Arc<LiveQueue>>,
        out_dir: Option<PathBuf>,
    ) -> Arc<Self> {
        let clock: SharedClock = Arc::new(SystemClock);
        let hub = SessionHub::new(clock, store.ids().map(Into::into));
        Arc::new(Self {
            hub,
            store,
            config,
            backends,
            sessions: Mutex::new(HashMap::new()),
            queue,
            out_dir,
        })
    }

    fn live(&self, id: &str) -> Result<Arc<LiveSession>, ApiError> {
        let not_found = || ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}"));
        let id: SessionId = id.parse().map_err(|_| not_found())?;
        self.sessions.lock().get(&id).cloned().ok_or_else(not_found)
    }

    fn create(self: &Arc<Self>, req: CreateSession) -> Result<SessionId, ApiError> {
        let (scenario, arm, actor) = match &req.fulfils {
            Some(entry_id) => {
                let queue = self.queue.as_ref().ok_or_else(|| {
                    ApiError(
                        StatusCode::CONFLICT,
                        "no study is waiting for live sessions".into(),
                    )
                })?;
                let entry = queue
                    .pending()
                    .into_iter()
                    .find(|a| a.encounter_id() == *entry_id)
                    .ok_or_else(|| {
                        ApiError(
                            StatusCode::NOT_FOUND,
                            format!("no pending encounter `{entry_id}`"),
                        )
                    })?;
                (entry.scenario, entry.arm, entry.actor)
            }
            None => {
                let scenario = req.scenario.clone().ok_or_else(|| {
                    ApiError(StatusCode::BAD_REQUEST, "scenario is required".into())
                })?;
                let arm = req
                    .arm
                    .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "arm is required".into()))?;
                (
                    scenario,
                    arm,
                    req.actor.clone().unwrap_or_else(|| "live".into()),
                )
            }
        };
        let cfg = &self.config;
        let session_config = SessionConfig::new(scenario.as_str(), arm, cfg.max_duration_ms)
            .with_actor(actor.as_str())
            .with_grace(cfg.barge_in_grace);
        let clock = cfg.serve.stepped_clock.then(|| ManualClock::new(0));
        let id = match &clock {
            Some(c) => self
                .hub
                .open_session_on(session_config, Arc::new(c.clone()))?,
            None => self.hub.open_session(session_config)?,
        };
        let live = Arc::new(LiveSession {
            id,
            scenario: scenario.clone(),
            arm,
            actor: actor.clone(),
            clock,
            pacing: Pacing::default(),
            fulfils: req.fulfils.clone(),
            snapshots: Mutex::new(Vec::new()),
            trace: Mutex::new(None),
            scores: Mutex::new(Vec::new()),
            activity: (Mutex::new(0), Condvar::new()),
        });
        self.sessions.lock().insert(id, live.clone());

        // The human arm has a live clinician on the other end; every other arm
        // gets a talker driven from here.
        if arm != Arm::Human {
            let entry = crate::plan::Assignment {
                actor,
                scenario,
                arm,
                order_index: 0,
            };
            let ctx = RunContext {
                store: &self.store,
                backends: self.backends.clone(),
                config: self.config.clone(),
                out_dir: PathBuf::new(),
            };
            let setup =
                encounter_setup(&entry, &ctx).map_err(|e| ApiError(StatusCode::NOT_FOUND, e))?;
            let side = ClinicianSide::new(
                setup.talker,
                setup.persona,
                setup.planner,
                setup.pacing,
                live.clock.clone(),
            );
            let state = self.clone();
            let max_turns = setup.max_turns;
            std::thread::spawn(move || state.drive(live, side, max_turns));
        }
        Ok(id)
    }

    /// Clinician loop for one live session; mirrors the batch encounter loop
    /// with the patient on the far side of the stream.
    fn drive(self: Arc<Self>, live: Arc<LiveSession>, mut side: ClinicianSide, max_turns: u32) {
        let Ok(shared) = self.hub.session(live.id) else {
            return;
        };
        let delay = Duration::from_millis(self.config.serve.chunk_delay_ms);
        for _ in 0..max_turns {
            // Frames from this index on belong to the current turn.
            let (turn, mark) = {
                let s = shared.lock();
                if !s.is_open() {
                    return;
                }
                (side.begin_turn(&s), s.frames().len())
            };
            let mut turn = match turn {
                Ok(t) => t,
                Err(e) => {
                    tracing::error!(session = %live.id, "talker failed: {e}");
                    break;
                }
            };
            loop {
                let more = side.step(&mut turn, &mut shared.lock());
                match more {
                    Ok(true) if !delay.is_zero() => std::thread::sleep(delay),
                    Ok(true) => {}
                    Ok(false) => break,
                    Err(e) => {
                        tracing::warn!(session = %live.id, "talker step failed: {e}");
                        break;
                    }
                }
            }
            {
                let mut s = shared.lock();
                if !s.is_open() || s.check_timeout() {
                    break;
                }
            }

            // Wait for the patient to finish their turn.
            let mut seen = *live.activity.0.lock();
            loop {
                {
                    let mut s = shared.lock();
                    if !s.is_open() {
                        drop(s);
                        self.finish(&live);
                        return;
                    }
                    if s.check_timeout() {
                        break;
                    }
                    let patient_done = s.frames()[mark..].iter().any(|f| {
                        matches!(&f.body, FrameBody::SessionControl(c) if c.action == ControlAction::PatientDone)
                    });
                    if patient_done {
                        break;
                    }
                }
                seen = live.wait_activity(seen, Duration::from_millis(500));
            }
            let mut s = shared.lock();
            if !s.is_open() {
                break;
            }
            if turn.plan.closes {
                let _ = s.submit(FrameBody::control(ControlAction::Close));
                break;
            }
            if let Err(e) = side.after_patient(&mut s) {
                tracing::warn!(session = %live.id, "planner update failed: {e}");
            }
            *live.snapshots.lock() = side.snapshots().to_vec();
        }
        self.finish(&live);
    }

    /// Takes the trace of an ended session and hands it to a waiting plan entry.
    fn finish(&self, live: &LiveSession) {
        let Ok(shared) = self.hub.session(live.id) else {
            return;
        };
        let trace = {
            let mut s = shared.lock();
            match s.close() {
                Ok(t) => t,
                Err(_) => return,
            }
        };
        *live.trace.lock() = Some(trace.clone());
        if let (Some(entry), Some(queue)) = (&live.fulfils, &self.queue) {
            if let Err(e) = queue.fulfil(entry, trace) {
                tracing::warn!(session = %live.id, "live trace not accepted: {e}");
            }
        }
        live.poke();
    }

    /// Logs a client frame. On a stepped clock the clock first advances by the
    /// batch pacing for the frame's kind.
    fn submit_client(&self, live: &LiveSession, body: FrameBody) -> Result<u64, SessionError> {
        let shared = self.hub.session(live.id)?;
        let closes =
            matches!(&body, FrameBody::SessionControl(c) if c.action == ControlAction::Close);
        let seq = {
            let mut s = shared.lock();
            if let Some(clock) = &live.clock {
                clock.advance(live.pacing.patient_frame_ms(&body));
            }
            s.submit(body)?
        };
        if closes {
            self.finish(live);
        }
        live.poke();
        Ok(seq)
    }

    fn score(&self, live: &LiveSession, form: ScoreForm) -> Result<(u32, Option<u32>), ApiError> {
        if live.trace.lock().is_none() {
            return Err(ApiError(
                StatusCode::CONFLICT,
                "session is still open".into(),
            ));
        }
        let case = self
            .store
            .case(&live.scenario)
            .map_err(|e| ApiError(StatusCode::NOT_FOUND, e.to_string()))?;
        let encounter_id = live
            .fulfils
            .clone()
            .unwrap_or_else(|| format!("live-{}", live.id));
        let sheet = ScoreSheet {
            encounter: EncounterRef {
                encounter_id: Some(EncounterId::new(encounter_id.as_str())),
                scenario: live.scenario.as_str().into(),
                arm: live.arm,
                actor: live.actor.as_str().into(),
            },
            items: form.items,
            universal: form.universal,
            rater: Rater::Manual(form.rater.clone()),
        };
        sheet
            .validate(&case.rubric)
            .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
        if let (Some(dir), Some(_)) = (&self.out_dir, &live.fulfils) {
            let path = dir.join(manual_sheet_path(&encounter_id));
            let written = path
                .parent()
                .map_or(Ok(()), std::fs::create_dir_all)
                .and_then(|_| std::fs::write(&path, sheet_json(&sheet)));
            written.map_err(|e| {
                ApiError(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    format!("{}: {e}", path.display()),
                )
            })?;
        }
        let mut scores = live.scores.lock();
        let score_id = scores.len() as u32 + 1;
        let superseded = scores
            .iter_mut()
            .rev()
            .find(|s| s.superseded_by.is_none())
            .map(|prev| {
                prev.superseded_by = Some(score_id);
                prev.score_id
            });
        scores.push(ScoreSubmission {
            score_id,
            rater: form.rater,
            sheet,
            superseded_by: None,
        });
        Ok((score_id, superseded))
    }

    fn report(&self, live: &LiveSession) -> Result<serde_json::Value, ApiError> {
        let case = self
            .store
            .case(&live.scenario)
            .map_err(|e| ApiError(StatusCode::NOT_FOUND, e.to_string()))?;
        let likert = self.config.analysis.likert;
        let grade = |sheet: &ScoreSheet| -> Result<EncounterScore, ApiError> {
            aggregate(sheet, &case.rubric, likert)
                .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
        };
        let trace = live.trace.lock().clone();
        let (status, frames, autograded, completions) = match &trace {
            Some(t) => {
                let sheet = autograde(t, &case.rubric)
                    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
                let score = grade(&sheet)?;
                let report = audit(t);
                (
                    "closed",
                    t.len(),
                    Some(json!({ "sheet": sheet, "score": score })),
                    Some(report.contextual_completions.len()),
                )
            }
            None => {
                let n = self
                    .hub
                    .session(live.id)
                    .map(|s| s.lock().frames().len())
                    .unwrap_or(0);
                ("open", n, None, None)
            }
        };
        let scores = live.scores.lock().clone();
        let current = match scores.iter().rev().find(|s| s.superseded_by.is_none()) {
            Some(s) => Some(
                json!({ "score_id": s.score_id, "rater": s.rater, "sheet": s.sheet, "score": grade(&s.sheet)? }),
            ),
            None => None,
        };
        Ok(json!({
            "session": live.id.to_string(),
            "scenario": live.scenario,
            "arm": live.arm,
            "actor": live.actor,
            "status": status,
            "frames": frames,
            "autograde": autograded,
            "contextual_completions": completions,
            "manual": current,
            "score_log": scores,
        }))
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/stream", get(stream))
        .route("/sessions/{id}/planner", get(planner))
        .route("/sessions/{id}/scores", post(submit_scores))
        .route("/sessions/{id}/trace", get(trace))
        .route("/reports/{id}", get(report))
        .route("/pending", get(pending))
        .with_state(state)
}

pub async fn serve(state: Arc<ServiceState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn create_session(
    State(st): State<Arc<ServiceState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let id = st.create(req)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id.to_string() }))))
}

async fn pending(State(st): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    let entries = st.queue.as_ref().map(|q| q.pending()).unwrap_or_default();
    let ids: Vec<String> = entries.iter().map(|a| a.encounter_id()).collect();
    Json(json!({ "pending": ids }))
}

async fn planner(
    State(st): State<Arc<ServiceState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let live = st.live(&id)?;
    let snapshots = live.snapshots.lock().clone();
    Ok(Json(json!({ "session": id, "snapshots": snapshots })))
}

async fn submit_scores(
    State(st): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    Json(form): Json<ScoreForm>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let live = st.live(&id)?;
    let (score_id, supersedes) = st.score(&live, form)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "score_id": score_id, "supersedes": supersedes })),
    ))
}

async fn trace(
    State(st): State<Arc<ServiceState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let live = st.live(&id)?;
    let trace = live.trace.lock().clone();
    match trace {
        Some(t) => Ok(([("content-type", "application/x-ndjson")], t.to_bytes()).into_response()),
        None => Err(ApiError(
            StatusCode::CONFLICT,
            "session is still open".into(),
        )),
    }
}

async fn report(
    State(st): State<Arc<ServiceState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let live = st.live(&id)?;
    Ok(Json(st.report(&live)?))
}

async fn stream(
    ws: WebSocketUpgrade,
    State(st): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
) -> Result<Response, ApiError> {
    let live = st.live(&id)?;
    let operator = q.view.as_deref() == Some("operator");
    Ok(ws.on_upgrade(move |socket| attach(socket, st, live, q.after, operator)))
}

/// Frames hidden from the patient view.
fn operator_only(frame: &EventFrame) -> bool {
    matches!(
        frame.kind(),
        FrameKind::DirectiveInjected | FrameKind::GoalStateChange
    )
}

enum Outgoing {
    Frame(EventFrame),
    Error(String),
}

async fn attach(
    socket: WebSocket,
    st: Arc<ServiceState>,
    live: Arc<LiveSession>,
    after: Option<u64>,
    operator: bool,
) {
    let (tx, mut rx) = mpsc::unbounded_channel::<Outgoing>();
    let Ok(shared) = st.hub.session(live.id) else {
        return;
    };
    // Snapshot and subscribe under one lock so no frame is missed or repeated.
    {
        let mut s = shared.lock();
        for f in s
            .frames()
            .iter()
            .filter(|f| after.is_none_or(|a| f.seq > a))
        {
            let _ = tx.send(Outgoing::Frame(f.clone()));
        }
        let frames_tx = tx.clone();
        s.subscribe(Arc::new(move |f: &EventFrame| {
            let _ = frames_tx.send(Outgoing::Frame(f.clone()));
        }));
    }
    let (mut sink, mut source) = socket.split();
    let send = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            let text = match out {
                Outgoing::Frame(f) if !operator && operator_only(&f) => continue,
                Outgoing::Frame(f) => serde_json::to_string(&f).expect("frame serializes"),
                Outgoing::Error(e) => json!({ "error": e }).to_string(),
            };
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = source.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let result = serde_json::from_str::<FrameBody>(&text)
            .map_err(|e| format!("malformed frame: {e}"))
            .and_then(|body| {
                let st = st.clone();
                let live = live.clone();
                st.submit_client(&live, body).map_err(|e| e.to_string())
            });
        if let Err(e) = result {
            let _ = tx.send(Outgoing::Error(e));
        }
    }
    send.abort();
}
