use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use futures::StreamExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use twinpilot_control::server::{router, AppState, EventMessage, Runtime};
use twinpilot_core::session::{Session, SessionConfig};

fn app(configure: impl FnOnce(&mut SessionConfig)) -> Router {
    let mut config = SessionConfig::demo();
    configure(&mut config);
    router(AppState::spawn(Runtime::new(Session::new(&config).unwrap())))
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = axum::body::to_bytes(res.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn lines(v: &Value) -> Vec<String> {
    v["events"].as_array().unwrap().iter().map(|e| e["line"].as_str().unwrap().to_string()).collect()
}

#[tokio::test]
async fn manual_invoke_returns_call_and_ack() {
    let app = app(|c| c.agents_enabled = false);
    let (status, body) = send(&app, "POST", "/functions/StorageStation/conveyor_1_run", Some(json!(["forward", 13]))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(
        lines(&body),
        [
            "[Storage Station][Operator][12:00:00] Storage Station calls function: conveyor_1_run('forward', 13).",
            "[Storage Station][Operator][12:00:00] Conveyor C1 starts running for 13 seconds."
        ]
    );
    let (status, body) = send(&app, "POST", "/functions/StorageStation/conveyor_1_run", Some(json!(["sideways", 13]))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("direction"), "{body}");
    let (status, _) = send(&app, "POST", "/functions/StorageStation/conveyor_1_run", Some(json!([true, 1]))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = send(&app, "POST", "/functions/Moon/conveyor_1_run", Some(json!([]))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, "POST", "/functions/Storage%20Station/fly", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn state_events_and_tick() {
    let app = app(|c| c.agents_enabled = false);
    let (_, state) = send(&app, "GET", "/state", None).await;
    assert_eq!(state["now"], 0);
    assert_eq!(state["mode"], "lockstep");
    assert!(state["plant"]["tracks"].is_array());
    assert!(state["layout"]["modules"][0]["functions"].is_array());
    send(&app, "POST", "/functions/StorageStation/H1_release", None).await;
    let (_, tick) = send(&app, "POST", "/tick", Some(json!({"ticks": 3}))).await;
    assert_eq!(tick["now"], 2);
    let (_, all) = send(&app, "GET", "/events", None).await;
    assert_eq!(all["events"].as_array().unwrap().len(), 2);
    let (_, later) = send(&app, "GET", "/events?from_seq=1", None).await;
    assert_eq!(lines(&later), ["[Storage Station][System][12:00:00] Holder H1 is released."]);
    let (_, none) = send(&app, "GET", "/events?scope=Inspection%20Station", None).await;
    assert!(none["events"].as_array().unwrap().is_empty());
    let (_, field) = send(&app, "GET", "/events?level=field", None).await;
    assert_eq!(field["events"].as_array().unwrap().len(), 2);
    let (status, _) = send(&app, "GET", "/events?level=galaxy", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn task_reaches_the_event_stream() {
    let app = app(|_| {});
    let req = Request::builder().uri("/events/stream").body(Body::empty()).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.headers()["content-type"], "text/event-stream");
    let mut stream = res.into_body().into_data_stream();

    let (status, _) = send(
        &app,
        "POST",
        "/tasks",
        Some(json!({"text": "retrieve a 'white plastic cylinder' from the storage station"})),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);

    let mut seen = Vec::new();
    let mut buf = String::new();
    while seen.len() < 3 {
        let chunk = tokio::time::timeout(std::time::Duration::from_secs(5), stream.next())
            .await
            .expect("stream stalled")
            .unwrap()
            .unwrap();
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let frame: String = buf.drain(..end + 2).collect();
            if let Some(data) = frame.lines().find_map(|l| l.strip_prefix("data: ")) {
                let msg: EventMessage = serde_json::from_str(data).unwrap();
                seen.push(msg.line);
            }
        }
    }
    assert_eq!(
        seen,
        [
            "[Task Planner][User][12:00:00] user task: retrieve a 'white plastic cylinder' from the storage station.",
            "[Task Planner][Manager][12:00:00] task assigned: retrieve a 'white plastic cylinder' from the storage station.",
            "[Storage Station][System][12:00:00] task received: retrieve a 'white plastic cylinder' from the storage station.",
        ]
    );
    // Everything streamed is in the log with identical rendering.
    let (_, all) = send(&app, "GET", "/events", None).await;
    assert_eq!(lines(&all)[..3], seen[..]);

    let (status, _) = send(&app, "POST", "/tasks", Some(json!({"text": "  "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn stream_replays_backlog_from_seq() {
    let app = app(|c| c.agents_enabled = false);
    send(&app, "POST", "/functions/StorageStation/H1_release", None).await;
    send(&app, "POST", "/functions/StorageStation/H1_engage", None).await;
    let req = Request::builder().uri("/events/stream?from_seq=2").body(Body::empty()).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let mut stream = res.into_body().into_data_stream();
    let chunk = stream.next().await.unwrap().unwrap();
    let text = std::str::from_utf8(&chunk).unwrap();
    assert!(text.contains("id: 3"), "{text}");
    assert!(!text.contains("id: 2\n"), "{text}");
}

#[tokio::test]
async fn approval_flow_and_conflicts() {
    let app = app(|c| c.approval_required = true);
    send(&app, "POST", "/tasks", Some(json!({"text": "retrieve a 'white plastic cylinder' from the storage station"}))).await;
    let (_, props) = send(&app, "GET", "/proposals", None).await;
    let first = &props["proposals"][0];
    assert_eq!(first["status"], "pending");
    assert_eq!(first["agent"], "manager");
    let (_, events) = send(&app, "GET", "/events", None).await;
    assert_eq!(events["events"].as_array().unwrap().len(), 1);

    let (status, body) = send(&app, "POST", "/proposals/1/approve", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(lines(&body).len(), 2);
    let (status, body) = send(&app, "POST", "/proposals/1/approve", None).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
    let (status, _) = send(&app, "POST", "/proposals/1/reject", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = send(&app, "POST", "/proposals/42/approve", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn recording_datasets_and_evaluation() {
    let app = app(|_| {});
    let (status, _) = send(&app, "POST", "/recording/start", None).await;
    assert_eq!(status, StatusCode::CONFLICT, "agents act without approval");

    let dir = tempfile::tempdir().unwrap();
    let app = {
        let mut config = SessionConfig::demo();
        config.agents_enabled = false;
        let mut rt = Runtime::new(Session::new(&config).unwrap());
        rt.dataset_dir = Some(dir.path().to_path_buf());
        router(AppState::spawn(rt))
    };
    let (status, _) = send(&app, "POST", "/recording/stop", Some(json!({"task_description": "x"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(send(&app, "POST", "/recording/start", None).await.0, StatusCode::OK);
    assert_eq!(send(&app, "POST", "/recording/start", None).await.0, StatusCode::CONFLICT);

    // Manual export run, as the human operator of the storage station.
    let (_, body) = send(&app, "POST", "/functions/StorageStation/H1_release", None).await;
    assert_eq!(lines(&body).len(), 2);
    send(&app, "POST", "/tick", Some(json!({"ticks": 2}))).await;
    send(&app, "POST", "/functions/StorageStation/H1_engage", None).await;

    let (status, body) = send(&app, "POST", "/recording/stop", Some(json!({"task_description": " "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    let (status, body) = send(
        &app,
        "POST",
        "/recording/stop",
        Some(json!({"task_description": "cycle holder H1", "name": "h1"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["cases"], 1);
    assert!(dir.path().join("h1.jsonl").exists());

    let (_, list) = send(&app, "GET", "/datasets", None).await;
    let ids: Vec<&str> = list["datasets"].as_array().unwrap().iter().map(|d| d["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["h1", "sample"]);

    let (status, body) = send(&app, "POST", "/evaluate", Some(json!({"dataset": "sample", "backend": "oracle"}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["report"]["routine"]["rate"], 1.0);
    assert!(body["table"].as_str().unwrap().contains("100.0%"));
    let (status, _) = send(&app, "POST", "/evaluate", Some(json!({"dataset": "nope", "backend": "oracle"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, "POST", "/evaluate", Some(json!({"dataset": "sample", "backend": "nope"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = send(&app, "POST", "/evaluate", Some(json!({"dataset": "sample", "backend": "sop"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["report"]["overall"]["cases"], 10);
}

#[tokio::test]
async fn summary_endpoint() {
    let app = app(|c| c.agents_enabled = false);
    let (status, _) = send(&app, "GET", "/summary", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    send(&app, "POST", "/functions/StorageStation/H1_release", None).await;
    let (status, body) = send(&app, "GET", "/summary", None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (_, events) = send(&app, "GET", "/events?scope=Plant", None).await;
    assert_eq!(events["events"][0]["text"], body["text"]);
    assert_eq!(events["events"][0]["source"], "Summarizer");

    let mut config = SessionConfig::demo();
    config.agents.retain(|a| a.id != "summarizer");
    let bare = router(AppState::spawn(Runtime::new(Session::new(&config).unwrap())));
    assert_eq!(send(&bare, "GET", "/summary", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn realtime_mode_advances_on_its_own() {
    let app = app(|c| {
        c.mode = twinpilot_core::session::Mode::Realtime;
        c.tick_rate = 50.0;
        c.agents_enabled = false;
    });
    tokio::time::sleep(std::time::Duration::from_millis(200)).await;
    let (_, state) = send(&app, "GET", "/state", None).await;
    assert!(state["now"].as_u64().unwrap() >= 2, "{state}");
}
