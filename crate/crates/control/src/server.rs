//! HTTP service over a running session.
//!
//! One thread owns the [`Runtime`]; handlers send it closures through an
//! ordered queue and await the reply. Events fan out to stream clients via a
//! bounded broadcast channel; a client that falls behind is disconnected and
//! can resume by polling `/events?from_seq=`.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot};

use twinpilot_core::agent::{LlmBackend, SummaryError};
use twinpilot_core::call::{Arg, FunctionCall};
use twinpilot_core::dataset::{evaluate, sample_dataset, Dataset, EvalOptions};
use twinpilot_core::event::{Event, SemanticLevel};
use twinpilot_core::session::{Mode, Session, SessionError};
use twinpilot_core::sim::SimError;

/// Backlog kept per stream client before it is considered too slow.
const STREAM_BUFFER: usize = 1024;

/// State owned by the session thread.
pub struct Runtime {
    pub session: Session,
    pub datasets: BTreeMap<String, Dataset>,
    /// Recorded suites are also written here when set.
    pub dataset_dir: Option<PathBuf>,
}

impl Runtime {
    pub fn new(session: Session) -> Self {
        Self {
            session,
            datasets: BTreeMap::from([("sample".to_string(), sample_dataset())]),
            dataset_dir: None,
        }
    }

    /// Lets agents react to an external action without advancing time.
    fn settle(&mut self) -> Result<(), SessionError> {
        if self.session.agents_enabled() {
            self.session.step_agents()?;
        }
        Ok(())
    }
}

type Job = Box<dyn FnOnce(&mut Runtime) + Send>;

/// An event as sent to clients: every field plus the rendered line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct EventMessage {
    #[serde(flatten)]
    pub event: Event,
    pub line: String,
}

#[derive(Clone)]
pub struct AppState {
    jobs: mpsc::Sender<Job>,
    events: broadcast::Sender<Arc<EventMessage>>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::Sim(SimError::UnknownModule(_) | SimError::UnknownFunction { .. })
            | SessionError::UnknownModule(_)
            | SessionError::UnknownProposal(_)
            | SessionError::NoSummarizer => StatusCode::NOT_FOUND,
            SessionError::Sim(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Conflict { .. }
            | SessionError::RecordingNotAllowed
            | SessionError::NotRecording
            | SessionError::AlreadyRecording
            | SessionError::Summary(SummaryError::EmptyLog) => StatusCode::CONFLICT,
            SessionError::EmptyTaskDescription | SessionError::InThePast { .. } | SessionError::Config(_) => {
                StatusCode::BAD_REQUEST
            }
            SessionError::Backend(_) | SessionError::Summary(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn session_loop(mut runtime: Runtime, jobs: mpsc::Receiver<Job>) {
    let period = match runtime.session.mode() {
        Mode::Realtime => Some(Duration::from_secs_f64(1.0 / runtime.session.tick_rate())),
        Mode::Lockstep => None,
    };
    let mut next_tick = Instant::now();
    loop {
        let job = match period {
            None => match jobs.recv() {
                Ok(job) => job,
                Err(_) => return,
            },
            Some(period) => match jobs.recv_timeout(next_tick.saturating_duration_since(Instant::now())) {
                Ok(job) => job,
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    if let Err(e) = runtime.session.advance() {
                        eprintln!("session tick failed: {e}");
                    }
                    next_tick += period;
                    continue;
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => return,
            },
        };
        job(&mut runtime);
    }
}

impl AppState {
    /// Starts the session thread. In real-time mode it advances the clock on
    /// its own; in lockstep mode only `POST /tick` moves time.
    pub fn spawn(mut runtime: Runtime) -> Self {
        let (events, _) = broadcast::channel(STREAM_BUFFER);
        let sender = events.clone();
        let epoch = runtime.session.log().epoch();
        runtime.session.subscribe(move |event| {
            let _ = sender.send(Arc::new(EventMessage {
                event: event.clone(),
                line: event.render(epoch),
            }));
        });
        let (jobs, rx) = mpsc::channel::<Job>();
        std::thread::Builder::new()
            .name("session".into())
            .spawn(move || session_loop(runtime, rx))
            .expect("spawn session thread");
        Self { jobs, events }
    }

    /// Runs `f` on the session thread and returns its result.
    pub async fn call<R: Send + 'static>(
        &self,
        f: impl FnOnce(&mut Runtime) -> R + Send + 'static,
    ) -> ApiResult<R> {
        let (tx, rx) = oneshot::channel();
        let job: Job = Box::new(move |rt| {
            let _ = tx.send(f(rt));
        });
        let gone = || ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "session is not running");
        self.jobs.send(job).map_err(|_| gone())?;
        rx.await.map_err(|_| gone())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/events", get(get_events))
        .route("/events/stream", get(stream_events))
        .route("/functions/{module}/{name}", post(invoke_function))
        .route("/tasks", post(post_task))
        .route("/tick", post(post_tick))
        .route("/proposals", get(get_proposals))
        .route("/proposals/{id}/approve", post(approve))
        .route("/proposals/{id}/reject", post(reject))
        .route("/recording/start", post(start_recording))
        .route("/recording/stop", post(stop_recording))
        .route("/datasets", get(get_datasets))
        .route("/evaluate", post(post_evaluate))
        .route("/summary", get(get_summary))
        .with_state(state)
}

fn message(rt: &Runtime, event: &Event) -> EventMessage {
    EventMessage {
        event: event.clone(),
        line: rt.session.log().render(event),
    }
}

fn messages(rt: &Runtime, seqs: &[u64]) -> Vec<EventMessage> {
    seqs.iter()
        .filter_map(|s| rt.session.log().get(*s))
        .map(|e| message(rt, e))
        .collect()
}

async fn get_state(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    state
        .call(|rt| {
            let s = &rt.session;
            json!({
                "now": s.now(),
                "clock": s.log().epoch().offset(s.now()).to_string(),
                "mode": s.mode(),
                "approval_required": s.approval_required(),
                "agents_enabled": s.agents_enabled(),
                "recording": s.is_recording(),
                "last_seq": s.log().last_seq(),
                "agents": s.agents().collect::<Vec<_>>(),
                "layout": s.plant().layout(),
                "plant": s.snapshot(),
            })
        })
        .await
        .map(Json)
}

#[derive(Debug, Default, Deserialize)]
pub struct EventQuery {
    #[serde(default)]
    from_seq: u64,
    scope: Option<String>,
    level: Option<String>,
}

fn parse_level(level: Option<&str>) -> ApiResult<Option<SemanticLevel>> {
    level
        .map(|l| l.parse::<SemanticLevel>().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string())))
        .transpose()
}

async fn get_events(State(state): State<AppState>, Query(q): Query<EventQuery>) -> ApiResult<Json<Value>> {
    let level = parse_level(q.level.as_deref())?;
    state
        .call(move |rt| {
            let events: Vec<EventMessage> = rt
                .session
                .log()
                .events()
                .iter()
                .filter(|e| e.seq > q.from_seq)
                .filter(|e| q.scope.as_ref().is_none_or(|s| *s == e.scope))
                .filter(|e| level.is_none_or(|l| l == e.level))
                .map(|e| message(rt, e))
                .collect();
            json!({ "last_seq": rt.session.log().last_seq(), "events": events })
        })
        .await
        .map(Json)
}

#[derive(Debug, Default, Deserialize)]
pub struct StreamQuery {
    #[serde(default)]
    from_seq: u64,
}

fn sse(msg: &EventMessage) -> Result<SseEvent, Infallible> {
    Ok(SseEvent::default()
        .id(msg.event.seq.to_string())
        .data(serde_json::to_string(msg).expect("event serializes")))
}

async fn stream_events(
    State(state): State<AppState>,
    Query(q): Query<StreamQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>> {
    // Subscribe before reading the backlog so nothing falls in between.
    let live = state.events.subscribe();
    let backlog = state
        .call(move |rt| {
            rt.session.log().events()[q.from_seq.min(rt.session.log().len() as u64) as usize..]
                .iter()
                .map(|e| message(rt, e))
                .collect::<Vec<_>>()
        })
        .await?;
    let mut last = backlog.last().map_or(q.from_seq, |m| m.event.seq);
    let replay = stream::iter(backlog.iter().map(sse).collect::<Vec<_>>());
    let live = stream::unfold(live, |mut rx| async move {
        match rx.recv().await {
            Ok(msg) => Some((Some(msg), rx)),
            // Lagged or closed: end the stream; the client falls back to polling.
            Err(_) => None,
        }
    })
    .filter_map(move |msg| {
        let out = msg.filter(|m| m.event.seq > last).map(|m| {
            last = m.event.seq;
            sse(&m)
        });
        async move { out }
    });
    Ok(Sse::new(replay.chain(live)).keep_alive(KeepAlive::default()))
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn to_arg(value: Value) -> ApiResult<Arg> {
    match value {
        Value::String(s) => Ok(Arg::Str(s)),
        Value::Number(n) => n.as_i64().map(Arg::Int).ok_or_else(|| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("argument {n} is not an integer"))
        }),
        other => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("argument {other} must be a string or an integer"),
        )),
    }
}

fn json_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid JSON body: {e}")))
}

async fn invoke_function(
    State(state): State<AppState>,
    Path((module, name)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let args: Vec<Value> = json_body(&body)?;
    let args = args.into_iter().map(to_arg).collect::<ApiResult<Vec<_>>>()?;
    let call = FunctionCall::new(name, args);
    state
        .call(move |rt| {
            let wanted = squash(&module);
            let module = rt
                .session
                .plant()
                .layout()
                .modules
                .iter()
                .find(|m| squash(&m.name) == wanted)
                .map(|m| m.name.clone())
                .ok_or(SessionError::UnknownModule(module))?;
            let seqs = rt.session.invoke(&module, &call)?;
            let events = messages(rt, &seqs);
            rt.settle()?;
            Ok::<_, SessionError>(json!({ "module": module, "call": call.to_string(), "events": events }))
        })
        .await?
        .map(Json)
        .map_err(ApiError::from)
}

#[derive(Debug, Default, Deserialize)]
struct TaskBody {
    text: String,
}

async fn post_task(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let TaskBody { text } = json_body(&body)?;
    if text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "task text must not be empty"));
    }
    state
        .call(move |rt| {
            let seq = rt.session.user_task(&text)?;
            rt.settle()?;
            Ok::<_, SessionError>(json!({ "seq": seq }))
        })
        .await?
        .map(|v| (StatusCode::ACCEPTED, Json(v)))
        .map_err(ApiError::from)
}

#[derive(Debug, Deserialize)]
struct TickBody {
    #[serde(default = "one")]
    ticks: u64,
}

impl Default for TickBody {
    fn default() -> Self {
        Self { ticks: 1 }
    }
}

fn one() -> u64 {
    1
}

async fn post_tick(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let TickBody { ticks } = json_body(&body)?;
    state
        .call(move |rt| {
            for _ in 0..ticks {
                rt.session.advance()?;
            }
            Ok::<_, SessionError>(json!({ "now": rt.session.now(), "last_seq": rt.session.log().last_seq() }))
        })
        .await?
        .map(Json)
        .map_err(ApiError::from)
}

async fn get_proposals(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    state
        .call(|rt| json!({ "proposals": rt.session.proposals(), "journal": rt.session.journal() }))
        .await
        .map(Json)
}

async fn approve(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    state
        .call(move |rt| {
            let before = rt.session.log().last_seq();
            rt.session.approve(id)?;
            let seqs: Vec<u64> = (before + 1..=rt.session.log().last_seq()).collect();
            let events = messages(rt, &seqs);
            rt.settle()?;
            Ok::<_, SessionError>(json!({ "id": id, "status": "approved", "events": events }))
        })
        .await?
        .map(Json)
        .map_err(ApiError::from)
}

async fn reject(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    state
        .call(move |rt| {
            rt.session.reject(id)?;
            Ok::<_, SessionError>(json!({ "id": id, "status": "rejected" }))
        })
        .await?
        .map(Json)
        .map_err(ApiError::from)
}

async fn start_recording(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    state
        .call(|rt| {
            rt.session.start_recording()?;
            Ok::<_, SessionError>(json!({ "recording": true, "from_seq": rt.session.log().last_seq() }))
        })
        .await?
        .map(Json)
        .map_err(ApiError::from)
}

#[derive(Debug, Default, Deserialize)]
struct StopBody {
    #[serde(default)]
    task_description: String,
    name: Option<String>,
}

async fn stop_recording(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let StopBody { task_description, name } = json_body(&body)?;
    state
        .call(move |rt| {
            let name = name.unwrap_or_else(|| format!("recording-{}", rt.datasets.len()));
            let (suite, warnings) = rt.session.stop_recording(&name, &task_description)?;
            let cases = suite.cases.len();
            let dataset = rt.session.dataset(vec![suite]);
            if let Some(dir) = &rt.dataset_dir {
                dataset.export_tests(&dir.join(format!("{name}.jsonl")))?;
            }
            rt.datasets.insert(name.clone(), dataset);
            let warnings: Vec<String> = warnings.iter().map(ToString::to_string).collect();
            Ok::<_, SessionError>(json!({ "dataset": name, "cases": cases, "warnings": warnings }))
        })
        .await?
        .map(Json)
        .map_err(ApiError::from)
}

async fn get_datasets(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    state
        .call(|rt| {
            let list: Vec<Value> = rt
                .datasets
                .iter()
                .map(|(id, ds)| json!({ "id": id, "manifest": ds.manifest() }))
                .collect();
            json!({ "datasets": list })
        })
        .await
        .map(Json)
}

#[derive(Debug, Default, Deserialize)]
struct EvaluateBody {
    dataset: String,
    backend: String,
    #[serde(default)]
    exclude_backend_failures: bool,
}

async fn post_evaluate(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: EvaluateBody = json_body(&body)?;
    let backend_id = req.backend.clone();
    let (dataset, backend) = state
        .call(move |rt| {
            let dataset = rt
                .datasets
                .get(&req.dataset)
                .cloned()
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no dataset {:?}", req.dataset)))?;
            let backend: Arc<dyn LlmBackend> = match rt.session.backend(&req.backend) {
                Some(b) => b,
                None if req.backend == "oracle" => Arc::new(dataset.oracle("oracle")),
                None => {
                    return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no backend {:?}", req.backend)))
                }
            };
            Ok((dataset, (backend, req)))
        })
        .await??;
    let (backend, req) = backend;
    // Completions may block on the network; keep them off the session thread.
    let mut report = tokio::task::spawn_blocking(move || {
        evaluate(
            &dataset,
            backend.as_ref(),
            EvalOptions {
                exclude_backend_failures: req.exclude_backend_failures,
            },
        )
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    report.backend = backend_id;
    Ok(Json(json!({ "table": report.table(), "report": report })))
}

async fn get_summary(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    state
        .call(|rt| {
            let text = rt.session.summary()?;
            Ok::<_, SessionError>(json!({ "text": text, "seq": rt.session.log().last_seq() }))
        })
        .await?
        .map(Json)
        .map_err(ApiError::from)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(runtime: Runtime, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::spawn(runtime))).await
}
