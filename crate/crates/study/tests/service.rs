mod support;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use telesim_core::encounter::{run_encounter as run_batch, Pacing};
use telesim_core::patient::PatientSim;
use telesim_core::session::{
    Arm, BargeIn, ControlAction, EventFrame, FrameBody, FrameKind, ManeuverMarker, ManeuverResult,
    Observation, PatientUtterance, TalkerChunk,
};
use telesim_core::trace::EncounterTrace;
use telesim_study::config::{BackendConfig, StudyConfig};
use telesim_study::runner::{encounter_setup, LiveQueue};
use telesim_study::service::{router, ServiceState};
use telesim_study::{run_study, Backends, RunContext, RunStatus, ScenarioStore};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn stepped() -> StudyConfig {
    let mut config = StudyConfig::default();
    config.serve.stepped_clock = true;
    config.serve.chunk_delay_ms = 0;
    config.hesitancy = 0.0;
    config
}

struct Server {
    base: String,
    ws: String,
}

async fn start(
    config: StudyConfig,
    queue: Option<Arc<LiveQueue>>,
    out: Option<std::path::PathBuf>,
) -> Server {
    let store = Arc::new(ScenarioStore::demo());
    let backends = Backends::from_config(&config, queue.clone()).unwrap();
    let state = ServiceState::new(store, config, backends, queue, out);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    Server {
        base: format!("http://{addr}"),
        ws: format!("ws://{addr}"),
    }
}

async fn http(method: &'static str, url: String, body: Option<Value>) -> (u16, String) {
    tokio::task::spawn_blocking(move || {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = match (method, body) {
            ("POST", Some(b)) => agent.post(&url).send_json(b),
            ("GET", None) => agent.get(&url).call(),
            _ => unreachable!(),
        }
        .unwrap();
        (
            resp.status().as_u16(),
            resp.body_mut().read_to_string().unwrap(),
        )
    })
    .await
    .unwrap()
}

async fn json_of(method: &'static str, url: String, body: Option<Value>) -> (u16, Value) {
    let (status, text) = http(method, url, body).await;
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

async fn create(server: &Server, body: Value) -> String {
    let (status, v) = json_of("POST", format!("{}/sessions", server.base), Some(body)).await;
    assert_eq!(status, 201, "{v}");
    v["id"].as_str().unwrap().to_owned()
}

async fn attach(server: &Server, id: &str, query: &str) -> Ws {
    let (ws, _) = connect_async(format!("{}/sessions/{id}/stream{query}", server.ws))
        .await
        .unwrap();
    ws
}

async fn next_frame(ws: &mut Ws) -> Option<EventFrame> {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(20), ws.next())
            .await
            .expect("frame in time")?
            .ok()?;
        if let Message::Text(t) = msg {
            let v: Value = serde_json::from_str(&t).unwrap();
            assert!(v.get("error").is_none(), "service error: {v}");
            return Some(serde_json::from_value(v).unwrap());
        }
    }
}

async fn send(ws: &mut Ws, body: &FrameBody) {
    ws.send(Message::Text(serde_json::to_string(body).unwrap().into()))
        .await
        .unwrap();
}

fn ends(frame: &EventFrame) -> bool {
    matches!(&frame.body, FrameBody::SessionControl(c) if matches!(c.action, ControlAction::Close | ControlAction::Timeout))
}

/// Plays the standardized patient over `ws` the same way the batch loop does,
/// until the session ends. Returns every frame received.
async fn play_patient(ws: &mut Ws, mut patient: PatientSim) -> Vec<EventFrame> {
    let pacing = Pacing::default();
    let mut seen = Vec::new();
    let mut words: Vec<String> = Vec::new();
    let mut capture = None;
    while let Some(frame) = next_frame(ws).await {
        seen.push(frame.clone());
        match &frame.body {
            FrameBody::TalkerUtteranceChunk(c) => words.push(c.text.clone()),
            FrameBody::FrameCaptureRequest(r) => capture = Some(r.request),
            FrameBody::SessionControl(c) if c.action == ControlAction::TalkerDone => {
                if let Some(request) = capture.take() {
                    let signs = patient.visible_state(frame.ts_ms + pacing.other_ms);
                    send(
                        ws,
                        &FrameBody::FrameObservation(Observation {
                            request: Some(request),
                            signs,
                        }),
                    )
                    .await;
                }
                let reply = patient.respond(&words.join(" "));
                words.clear();
                for m in reply.markers {
                    send(ws, &FrameBody::ManeuverMarker(m)).await;
                }
                send(ws, &FrameBody::PatientUtterance(reply.utterance)).await;
                send(ws, &FrameBody::control(ControlAction::PatientDone)).await;
            }
            _ if ends(&frame) => break,
            _ => {}
        }
    }
    seen
}

async fn trace_of(server: &Server, id: &str) -> EncounterTrace {
    for _ in 0..100 {
        let (status, text) =
            http("GET", format!("{}/sessions/{id}/trace", server.base), None).await;
        if status == 200 {
            return EncounterTrace::from_bytes(text.as_bytes()).unwrap();
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("session {id} never closed");
}

fn batch_trace(config: &StudyConfig, scenario: &str, arm: Arm, actor: &str) -> EncounterTrace {
    let store = ScenarioStore::demo();
    let ctx = RunContext {
        store: &store,
        backends: Backends::default(),
        config: config.clone(),
        out_dir: Default::default(),
    };
    let entry = telesim_study::Assignment {
        actor: actor.into(),
        scenario: scenario.into(),
        arm,
        order_index: 0,
    };
    run_batch(&encounter_setup(&entry, &ctx).unwrap())
        .unwrap()
        .trace
}

fn patient_for(scenario: &str) -> PatientSim {
    PatientSim::new(ScenarioStore::demo().case(scenario).unwrap().script.clone())
}

#[tokio::test(flavor = "multi_thread")]
async fn attaching_streams_the_greeting() {
    let server = start(stepped(), None, None).await;
    let id = create(
        &server,
        json!({ "scenario": "asthma", "arm": "coclinician" }),
    )
    .await;
    let mut ws = attach(&server, &id, "").await;
    let first = next_frame(&mut ws).await.unwrap();
    assert_eq!(first.seq, 0);
    let FrameBody::TalkerUtteranceChunk(chunk) = &first.body else {
        panic!("expected a greeting chunk, got {first:?}");
    };
    assert_eq!(chunk.utterance, 0);
    assert!(!chunk.text.is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn service_replay_matches_the_batch_trace() {
    let config = stepped();
    let server = start(config.clone(), None, None).await;
    for (scenario, arm) in [
        ("myasthenia_gravis", Arm::Coclinician),
        ("rotator_cuff", Arm::ComparatorRealtime),
    ] {
        let id = create(
            &server,
            json!({ "scenario": scenario, "arm": arm, "actor": "actor_07" }),
        )
        .await;
        let mut ws = attach(&server, &id, "?view=operator").await;
        play_patient(&mut ws, patient_for(scenario)).await;
        let live = trace_of(&server, &id).await;
        let batch = batch_trace(&config, scenario, arm, "actor_07");
        assert_eq!(live.header(), batch.header());
        assert_eq!(live.len(), batch.len());
        for (a, b) in live.frames().iter().zip(batch.frames()) {
            assert_eq!(a, b);
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn patient_view_hides_the_planner() {
    let server = start(stepped(), None, None).await;
    let id = create(
        &server,
        json!({ "scenario": "asthma", "arm": "coclinician" }),
    )
    .await;
    let mut patient = attach(&server, &id, "?view=patient").await;
    let seen = play_patient(&mut patient, patient_for("asthma")).await;
    assert!(seen.iter().all(|f| !matches!(
        f.kind(),
        FrameKind::DirectiveInjected | FrameKind::GoalStateChange
    )));

    let mut operator = attach(&server, &id, "?view=operator").await;
    let mut all = Vec::new();
    while let Some(f) = next_frame(&mut operator).await {
        let done = ends(&f);
        all.push(f);
        if done {
            break;
        }
    }
    assert!(all.iter().any(|f| f.kind() == FrameKind::DirectiveInjected));
    let visible: Vec<_> = all
        .iter()
        .filter(|f| {
            !matches!(
                f.kind(),
                FrameKind::DirectiveInjected | FrameKind::GoalStateChange
            )
        })
        .collect();
    assert_eq!(visible.len(), seen.len());

    let (status, v) = json_of(
        "GET",
        format!("{}/sessions/{id}/planner", server.base),
        None,
    )
    .await;
    assert_eq!(status, 200);
    assert!(!v["snapshots"].as_array().unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn reconnecting_after_a_seq_resumes_without_duplicates() {
    let server = start(stepped(), None, None).await;
    let id = create(
        &server,
        json!({ "scenario": "rotator_cuff", "arm": "coclinician_no_planner" }),
    )
    .await;
    let mut observer = attach(&server, &id, "?view=operator").await;
    let mut got = Vec::new();
    for _ in 0..3 {
        got.push(next_frame(&mut observer).await.unwrap());
    }
    drop(observer);

    let mut patient = attach(&server, &id, "?view=patient").await;
    play_patient(&mut patient, patient_for("rotator_cuff")).await;

    let last = got.last().unwrap().seq;
    let mut observer = attach(&server, &id, &format!("?view=operator&after={last}")).await;
    while let Some(f) = next_frame(&mut observer).await {
        let done = ends(&f);
        got.push(f);
        if done {
            break;
        }
    }
    let trace = trace_of(&server, &id).await;
    assert_eq!(got.as_slice(), trace.frames());
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_sessions_are_not_found() {
    let server = start(stepped(), None, None).await;
    for path in [
        "/reports/12345",
        "/sessions/12345/planner",
        "/sessions/nope/trace",
    ] {
        let (status, v) = json_of("GET", format!("{}{path}", server.base), None).await;
        assert_eq!(status, 404, "{path}");
        assert!(v["error"].is_string());
    }
    let (status, _) = json_of(
        "POST",
        format!("{}/sessions/12345/scores", server.base),
        Some(json!({ "rater": "r", "items": {} })),
    )
    .await;
    assert_eq!(status, 404);
    let (status, _) = json_of(
        "POST",
        format!("{}/sessions", server.base),
        Some(json!({ "scenario": "nope", "arm": "human" })),
    )
    .await;
    assert_eq!(status, 404);
}

fn full_items(scenario: &str, score: u8) -> BTreeMap<String, u8> {
    let store = ScenarioStore::demo();
    store
        .case(scenario)
        .unwrap()
        .rubric
        .items()
        .map(|i| (i.id.clone(), score))
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn manual_scores_supersede_and_keep_an_audit_log() {
    let server = start(stepped(), None, None).await;
    let id = create(
        &server,
        json!({ "scenario": "asthma", "arm": "comparator_realtime" }),
    )
    .await;
    let scores = format!("{}/sessions/{id}/scores", server.base);
    let form = |score: u8, rater: &str| json!({ "rater": rater, "items": full_items("asthma", score), "universal": { "empathy": 4 } });

    let (status, _) = json_of("POST", scores.clone(), Some(form(1, "r1"))).await;
    assert_eq!(status, 409, "scores wait for the session to close");

    let mut patient = attach(&server, &id, "").await;
    play_patient(&mut patient, patient_for("asthma")).await;
    trace_of(&server, &id).await;

    let (status, v) = json_of("POST", scores.clone(), Some(form(1, "r1"))).await;
    assert_eq!(status, 201, "{v}");
    assert_eq!(v["score_id"], 1);
    let (status, v) = json_of("POST", scores.clone(), Some(form(2, "r2"))).await;
    assert_eq!(status, 201);
    assert_eq!(v["supersedes"], 1);
    let (status, _) = json_of(
        "POST",
        scores.clone(),
        Some(json!({ "rater": "r3", "items": { "not_an_item": 1 } })),
    )
    .await;
    assert_eq!(status, 422);

    let (status, report) = json_of("GET", format!("{}/reports/{id}", server.base), None).await;
    assert_eq!(status, 200);
    assert_eq!(report["status"], "closed");
    assert_eq!(report["manual"]["score_id"], 2);
    assert_eq!(report["manual"]["rater"], "r2");
    let log = report["score_log"].as_array().unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log[0]["superseded_by"], 2);
    assert!(log[1]["superseded_by"].is_null());
    assert!(report["autograde"]["score"].is_object());
    assert!(report.to_string().contains("\"total\""));
}

async fn next_text(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(20), ws.next())
            .await
            .unwrap()
            .unwrap()
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn barge_in_cuts_the_talker_off() {
    let mut config = StudyConfig {
        barge_in_grace: 0,
        ..Default::default()
    };
    config.serve.chunk_delay_ms = 300;
    let server = start(config, None, None).await;
    let id = create(
        &server,
        json!({ "scenario": "asthma", "arm": "coclinician_no_planner" }),
    )
    .await;
    let mut ws = attach(&server, &id, "").await;
    let first = next_frame(&mut ws).await.unwrap();
    assert_eq!(first.kind(), FrameKind::TalkerUtteranceChunk);
    send(
        &mut ws,
        &FrameBody::BargeIn(BargeIn {
            text: Some("Sorry, can I ask something?".into()),
        }),
    )
    .await;

    let mut log = vec![first];
    while log.last().unwrap().kind() != FrameKind::BargeIn {
        log.push(next_frame(&mut ws).await.unwrap());
    }
    send(
        &mut ws,
        &FrameBody::PatientUtterance(PatientUtterance {
            text: "Is this serious?".into(),
            findings: vec![],
        }),
    )
    .await;
    send(&mut ws, &FrameBody::control(ControlAction::PatientDone)).await;
    // Read on until the talker starts its next utterance.
    loop {
        let f = next_frame(&mut ws).await.unwrap();
        let next = matches!(&f.body, FrameBody::TalkerUtteranceChunk(c) if c.utterance > 0);
        log.push(f);
        if next {
            break;
        }
    }
    let barge = log
        .iter()
        .position(|f| f.kind() == FrameKind::BargeIn)
        .unwrap();
    let late = log[barge..]
        .iter()
        .filter(|f| matches!(&f.body, FrameBody::TalkerUtteranceChunk(c) if c.utterance == 0))
        .count();
    assert_eq!(
        late, 0,
        "no greeting chunk after a barge-in with zero grace: {log:?}"
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn maneuver_results_echo_and_closed_sessions_refuse_frames() {
    let server = start(stepped(), None, None).await;
    let id = create(
        &server,
        json!({ "scenario": "myasthenia_gravis", "arm": "human" }),
    )
    .await;
    let mut ws = attach(&server, &id, "").await;
    let marker = ManeuverMarker {
        maneuver: "arm_drift".into(),
        result: ManeuverResult::Finding,
        held_s: Some(30),
        finding: Some("arm_fatigue".into()),
        description: "Held both arms out for thirty seconds".into(),
    };
    send(&mut ws, &FrameBody::ManeuverMarker(marker.clone())).await;
    let echoed = next_frame(&mut ws).await.unwrap();
    assert_eq!(echoed.body, FrameBody::ManeuverMarker(marker));

    send(&mut ws, &FrameBody::control(ControlAction::Close)).await;
    assert!(ends(&next_frame(&mut ws).await.unwrap()));
    send(&mut ws, &FrameBody::patient("Hello?")).await;
    let reply = next_text(&mut ws).await;
    assert!(
        reply["error"].as_str().unwrap().contains("closed"),
        "{reply}"
    );

    let (_, report) = json_of("GET", format!("{}/reports/{id}", server.base), None).await;
    assert_eq!(report["status"], "closed");
}

#[test]
fn live_human_arm_waits_for_a_session() {
    let out = tempfile::tempdir().unwrap();
    let mut config = support::config(&["asthma"], &["actor_01"], 0);
    config.serve.stepped_clock = true;
    config.serve.chunk_delay_ms = 0;
    config
        .backends
        .insert("human".into(), BackendConfig::Live { timeout_s: 60 });
    let queue = Arc::new(LiveQueue::new());
    let plan = support::plan(&config);
    let human = plan
        .assignments
        .iter()
        .find(|a| a.arm == Arm::Human)
        .unwrap()
        .encounter_id();

    let rt = tokio::runtime::Runtime::new().unwrap();
    let server = rt.block_on(start(
        config.clone(),
        Some(queue.clone()),
        Some(out.path().to_owned()),
    ));

    let study = {
        let (config, queue, dir) = (config.clone(), queue.clone(), out.path().to_owned());
        std::thread::spawn(move || {
            let store = ScenarioStore::demo();
            let backends = Backends::from_config(&config, Some(queue)).unwrap();
            let ctx = RunContext {
                store: &store,
                backends,
                config,
                out_dir: dir,
            };
            run_study(&plan, &ctx)
        })
    };
    assert!(queue
        .wait_pending(&human, Duration::from_secs(30))
        .is_some());

    rt.block_on(async {
        let (_, v) = json_of("GET", format!("{}/pending", server.base), None).await;
        assert_eq!(v["pending"], json!([human]));
        let id = create(&server, json!({ "fulfils": human })).await;
        let mut ws = attach(&server, &id, "").await;
        let mut patient = patient_for("asthma");
        for (u, line) in [
            "Hello, I'm the doctor on call today.",
            "Have you had any fever or chills?",
        ]
        .iter()
        .enumerate()
        {
            let chunk = TalkerChunk {
                utterance: u as u32,
                index: 0,
                text: line.to_string(),
                cites: vec![],
            };
            send(&mut ws, &FrameBody::TalkerUtteranceChunk(chunk)).await;
            send(&mut ws, &FrameBody::control(ControlAction::TalkerDone)).await;
            let reply = patient.respond(line);
            send(&mut ws, &FrameBody::PatientUtterance(reply.utterance)).await;
            send(&mut ws, &FrameBody::control(ControlAction::PatientDone)).await;
        }
        send(&mut ws, &FrameBody::control(ControlAction::Close)).await;
        let trace = trace_of(&server, &id).await;
        assert_eq!(trace.header().arm, Arm::Human);

        let form = json!({ "rater": "r1", "items": full_items("asthma", 1) });
        let (status, _) = json_of(
            "POST",
            format!("{}/sessions/{id}/scores", server.base),
            Some(form),
        )
        .await;
        assert_eq!(status, 201);
    });

    let records = study.join().unwrap().unwrap();
    assert_eq!(records.len(), 4);
    assert!(
        records.iter().all(|r| r.status == RunStatus::Ok),
        "{records:?}"
    );
    let record = records.iter().find(|r| r.encounter_id == human).unwrap();
    let bytes = std::fs::read(out.path().join(record.trace_path.as_ref().unwrap())).unwrap();
    let trace = EncounterTrace::from_bytes(&bytes).unwrap();
    assert!(trace.frames().iter().any(
        |f| matches!(&f.body, FrameBody::TalkerUtteranceChunk(c) if c.text.contains("fever"))
    ));
    assert!(out
        .path()
        .join(telesim_study::analyze::manual_sheet_path(&human))
        .exists());
}
