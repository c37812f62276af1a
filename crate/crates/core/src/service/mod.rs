//! HTTP API for creating runs, following them live and steering them with
//! feedback.
//!
//! | Method | Path | |
//! |---|---|---|
//! | POST | `/runs` | start a run from a [`RunRequest`] |
//! | GET | `/runs` | run summaries |
//! | GET | `/runs/{id}` | folded run state |
//! | GET | `/runs/{id}/log?from_seq=&limit=` | a page of log records |
//! | GET | `/runs/{id}/stream?from_seq=` | server-sent events, one record per message |
//! | POST | `/runs/{id}/feedback` | submit feedback to a live run |
//! | GET | `/runs/{id}/artifacts/{artifact_id}` | payload and hash (`?raw=true` for bytes) |
//! | GET | `/runs/{id}/gantt` | Gantt rows |

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::crew::{pipeline_preset, WorkerRegistry};
use crate::feedback::{
    scripted_feedback_source, Feedback, FeedbackKind, FeedbackSource, FeedbackTrace, FrequencyPolicy, PolicyName,
    Silent, Verdict,
};
use crate::graph::{ready_set, validate_pipeline, Durations, EventId, Params, PipelineDef, ValidatedGraph};
use crate::scheduler::{run, LiveFeedback, Mode, RunConfig, SliceClock, VirtualSliceClock, WallSliceClock};
use crate::store::{EventLogRecord, GanttRow, LogFolder, RecordKind, RunStatus, Store};
use crate::DEFAULT_SEED;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    #[default]
    Virtual,
    Wall,
}

impl std::str::FromStr for ClockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "virtual" => Ok(Self::Virtual),
            "wall" => Ok(Self::Wall),
            other => Err(format!("unknown clock `{other}` (expected virtual or wall)")),
        }
    }
}

/// A bundled preset name or an inline pipeline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PipelineRef {
    Preset(String),
    Inline(PipelineDef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub pipeline: PipelineRef,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub clock: ClockKind,
    #[serde(default)]
    pub feedback_trace: Option<FeedbackTrace>,
    #[serde(default)]
    pub policy: Option<PolicyName>,
    #[serde(default)]
    pub durations: Durations,
    /// Wall milliseconds per tick.
    #[serde(default)]
    pub tick_ms: Option<u64>,
    /// How long a completed wall-clock run waits for late feedback.
    #[serde(default)]
    pub review_window_ms: Option<u64>,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl RunRequest {
    pub fn preset(name: &str) -> Self {
        Self {
            pipeline: PipelineRef::Preset(name.to_owned()),
            mode: Mode::Parallel,
            seed: DEFAULT_SEED,
            clock: ClockKind::Virtual,
            feedback_trace: None,
            policy: None,
            durations: Durations::new(),
            tick_ms: None,
            review_window_ms: None,
        }
    }
}

/// Feedback as a client sends it; the service assigns the id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSubmission {
    pub target: String,
    pub kind: FeedbackKind,
    pub verdict: Verdict,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub amendments: Params,
}

#[derive(Debug, Clone, Copy)]
pub struct ServiceConfig {
    pub tick: Duration,
    pub review_window: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { tick: Duration::from_millis(20), review_window: Duration::from_secs(2) }
    }
}

struct RunHandle {
    graph: Arc<ValidatedGraph>,
    live: Option<LiveFeedback>,
    error: Arc<Mutex<Option<String>>>,
}

struct Inner {
    store: Store,
    config: ServiceConfig,
    runs: Mutex<BTreeMap<String, Arc<RunHandle>>>,
    next_run: AtomicU64,
    next_feedback: AtomicU64,
}

/// Shared service state. Cheap to clone.
#[derive(Clone)]
pub struct Service(Arc<Inner>);

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message.to_string())
    }

    fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

impl Service {
    pub fn new(store: Store, config: ServiceConfig) -> Self {
        Self(Arc::new(Inner {
            store,
            config,
            runs: Mutex::default(),
            next_run: AtomicU64::new(1),
            next_feedback: AtomicU64::new(0),
        }))
    }

    pub fn store(&self) -> &Store {
        &self.0.store
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/runs", post(create_run).get(list_runs))
            .route("/runs/{id}", get(get_run))
            .route("/runs/{id}/log", get(get_log))
            .route("/runs/{id}/stream", get(stream_run))
            .route("/runs/{id}/feedback", post(submit_feedback))
            .route("/runs/{id}/artifacts/{artifact_id}", get(get_artifact))
            .route("/runs/{id}/gantt", get(get_gantt))
            .with_state(self.clone())
    }

    /// Validates the request and starts the run loop on its own thread.
    pub fn start_run(&self, request: RunRequest) -> ApiResult<String> {
        let def = match &request.pipeline {
            PipelineRef::Preset(name) => pipeline_preset(name).map_err(ApiError::bad_request)?,
            PipelineRef::Inline(def) => def.clone(),
        };
        let graph = Arc::new(validate_pipeline(&def).map_err(ApiError::bad_request)?);
        for id in request.durations.keys() {
            if !graph.contains(id.as_str()) {
                return Err(ApiError::bad_request(format!("duration given for unknown event `{id}`")));
            }
        }
        let source: Box<dyn FeedbackSource> = match &request.feedback_trace {
            Some(trace) => {
                let policy = request.policy.map_or_else(FrequencyPolicy::no_limits, FrequencyPolicy::preset);
                Box::new(scripted_feedback_source(trace, policy, &graph).map_err(ApiError::bad_request)?)
            }
            None => Box::new(Silent),
        };
        let workers = WorkerRegistry::mock_for(&def);

        let run_id = format!("run-{}", self.0.next_run.fetch_add(1, Ordering::SeqCst));
        let store = &self.0.store;
        store.create_run(&run_id).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let (clock, live): (Box<dyn SliceClock>, Option<LiveFeedback>) = match request.clock {
            ClockKind::Virtual => (Box::new(VirtualSliceClock::new()), None),
            ClockKind::Wall => {
                let tick = request.tick_ms.map_or(self.0.config.tick, Duration::from_millis);
                let window = request.review_window_ms.map_or(self.0.config.review_window, Duration::from_millis);
                let clock = WallSliceClock::new(tick, window);
                let live = clock.live_feedback();
                (Box::new(clock), Some(live))
            }
        };
        let handle = Arc::new(RunHandle { graph: graph.clone(), live, error: Arc::default() });
        self.0.runs.lock().unwrap().insert(run_id.clone(), handle.clone());

        let config = RunConfig {
            run_id: run_id.clone(),
            mode: request.mode,
            seed: request.seed,
            retry_budget: 3,
            durations: request.durations,
        };
        let mut sink = store.sink(&run_id).expect("run was just created");
        std::thread::Builder::new()
            .name(run_id.clone())
            .spawn(move || {
                let (mut source, mut clock) = (source, clock);
                if let Err(e) = run(&graph, &workers, source.as_mut(), clock.as_mut(), &config, &mut sink) {
                    tracing::warn!(run = %config.run_id, error = %e, "run ended with an error");
                    *handle.error.lock().unwrap() = Some(e.to_string());
                }
            })
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        Ok(run_id)
    }

    fn handle(&self, run_id: &str) -> ApiResult<Arc<RunHandle>> {
        self.0.runs.lock().unwrap().get(run_id).cloned().ok_or_else(|| ApiError::not_found(format!("run `{run_id}`")))
    }

    /// Accepts feedback for a live run and returns its assigned id.
    pub fn submit_feedback(&self, run_id: &str, submission: FeedbackSubmission) -> ApiResult<String> {
        let handle = self.handle(run_id)?;
        let feedback_id = format!("live-{}", self.0.next_feedback.load(Ordering::SeqCst));
        let feedback = Feedback {
            id: feedback_id.clone(),
            arrival_time: 0,
            target: submission.target,
            kind: submission.kind,
            verdict: submission.verdict,
            note: submission.note,
            amendments: submission.amendments,
        };
        feedback.validate().map_err(ApiError::bad_request)?;
        let state = self.state(run_id)?;
        let known = handle.graph.contains(&feedback.target)
            || state.latest_report.done.values().any(|d| d.artifact_id.as_str() == feedback.target);
        if !known {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                crate::feedback::FeedbackError::UnknownTarget(feedback.target).to_string(),
            ));
        }
        let live = handle.live.as_ref().ok_or_else(|| {
            ApiError::new(StatusCode::CONFLICT, "virtual-clock runs take feedback only from their trace")
        })?;
        live.submit(feedback).map_err(|e| ApiError::new(StatusCode::CONFLICT, e.to_string()))?;
        self.0.next_feedback.fetch_add(1, Ordering::SeqCst);
        Ok(feedback_id)
    }

    fn state(&self, run_id: &str) -> ApiResult<crate::store::RunState> {
        match self.0.store.state(run_id) {
            Ok(Ok(state)) => Ok(state),
            Ok(Err(e)) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string())),
            Err(_) => Err(ApiError::not_found(format!("run `{run_id}`"))),
        }
    }

    /// Resolves once the run's log is closed.
    pub async fn wait_closed(&self, run_id: &str) -> ApiResult<()> {
        let mut rx = self.0.store.subscribe(run_id).map_err(|_| ApiError::not_found(format!("run `{run_id}`")))?;
        while !rx.borrow_and_update().closed {
            if rx.changed().await.is_err() {
                break;
            }
        }
        Ok(())
    }
}

/// Serves the API on `listener` until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, service: Service) -> std::io::Result<()> {
    axum::serve(listener, service.router()).await
}

async fn create_run(State(service): State<Service>, body: axum::body::Bytes) -> ApiResult<impl IntoResponse> {
    let request: RunRequest = serde_json::from_slice(&body).map_err(ApiError::bad_request)?;
    let run_id = service.start_run(request)?;
    Ok((StatusCode::CREATED, Json(json!({ "run_id": run_id, "status": RunStatus::Running }))))
}

async fn list_runs(State(service): State<Service>) -> ApiResult<Json<Value>> {
    let mut runs = Vec::new();
    for run_id in service.store().run_ids() {
        if let Ok(state) = service.state(&run_id) {
            runs.push(json!({
                "run_id": run_id,
                "pipeline": state.pipeline,
                "status": state.status,
                "slice_count": state.slice_count,
                "makespan": state.makespan,
            }));
        }
    }
    Ok(Json(json!({ "runs": runs })))
}

async fn get_run(State(service): State<Service>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let state = service.state(&id)?;
    let mut body = serde_json::to_value(&state).expect("state serializes");
    if let Ok(handle) = service.handle(&id) {
        body["ready"] = json!(ready_set(&handle.graph, &state.latest_report));
        if let Some(error) = handle.error.lock().unwrap().clone() {
            body["error"] = Value::String(error);
        }
    }
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
struct LogQuery {
    #[serde(default)]
    from_seq: u64,
    limit: Option<usize>,
}

async fn get_log(
    State(service): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<LogQuery>,
) -> ApiResult<Json<Value>> {
    let records =
        service.store().records(&id, q.from_seq, q.limit).map_err(|_| ApiError::not_found(format!("run `{id}`")))?;
    let next_seq = records.last().map_or(q.from_seq, |r| r.seq + 1);
    Ok(Json(json!({ "records": records, "next_seq": next_seq })))
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    from_seq: Option<u64>,
}

/// One stream message: the record plus what it changed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamEvent {
    #[serde(flatten)]
    pub record: EventLogRecord,
    pub ready: Vec<EventId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gantt: Option<GanttRow>,
}

struct Tail {
    store: Store,
    run_id: String,
    graph: Option<Arc<ValidatedGraph>>,
    rx: tokio::sync::watch::Receiver<crate::store::LogCursor>,
    folder: LogFolder,
    cursor: u64,
    from: u64,
    pending: std::collections::VecDeque<Event>,
    ended: bool,
}

impl Tail {
    fn derive(&mut self, record: &EventLogRecord) -> Option<Event> {
        let _ = self.folder.push(record);
        if record.seq < self.from {
            return None;
        }
        let state = self.folder.state();
        let ready = match (&self.graph, state) {
            (Some(graph), Some(state)) => ready_set(graph, &state.latest_report).into_iter().collect(),
            _ => Vec::new(),
        };
        let gantt = match (record.kind, &record.event_id, state) {
            (
                RecordKind::Enqueue | RecordKind::Complete | RecordKind::Fail | RecordKind::Revoke,
                Some(id),
                Some(state),
            ) => state.gantt.iter().rev().find(|r| &r.event_id == id && Some(r.attempt) == record.attempt).cloned(),
            _ => None,
        };
        let message = StreamEvent { record: record.clone(), ready, gantt };
        Some(
            Event::default()
                .id(record.seq.to_string())
                .event("record")
                .data(serde_json::to_string(&message).expect("stream events serialize")),
        )
    }

    async fn next(mut self) -> Option<(Result<Event, Infallible>, Self)> {
        loop {
            if let Some(event) = self.pending.pop_front() {
                return Some((Ok(event), self));
            }
            if self.ended {
                return None;
            }
            let records = self.store.records(&self.run_id, self.cursor, None).unwrap_or_default();
            if !records.is_empty() {
                self.cursor = records.last().unwrap().seq + 1;
                for record in &records {
                    if let Some(event) = self.derive(record) {
                        self.pending.push_back(event);
                    }
                }
                continue;
            }
            if self.rx.borrow_and_update().closed {
                self.ended = true;
                let last = self.cursor.checked_sub(1);
                self.pending.push_back(Event::default().event("end").data(json!({ "last_seq": last }).to_string()));
                continue;
            }
            if self.rx.changed().await.is_err() {
                self.ended = true;
            }
        }
    }
}

async fn stream_run(
    State(service): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let rx = service.store().subscribe(&id).map_err(|_| ApiError::not_found(format!("run `{id}`")))?;
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok())
        .map(|seq| seq + 1);
    let from = q.from_seq.into_iter().chain(resume).max().unwrap_or(0);
    let tail = Tail {
        store: service.store().clone(),
        graph: service.handle(&id).ok().map(|h| h.graph.clone()),
        run_id: id,
        rx,
        folder: LogFolder::new(),
        cursor: 0,
        from,
        pending: Default::default(),
        ended: false,
    };
    Ok(Sse::new(stream::unfold(tail, Tail::next)).keep_alive(KeepAlive::default()))
}

async fn submit_feedback(
    State(service): State<Service>,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<impl IntoResponse> {
    service.handle(&id)?;
    let submission: FeedbackSubmission = serde_json::from_slice(&body).map_err(ApiError::bad_request)?;
    let feedback_id = service.submit_feedback(&id, submission)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "feedback_id": feedback_id }))))
}

#[derive(Debug, Deserialize)]
struct ArtifactQuery {
    #[serde(default)]
    raw: bool,
}

async fn get_artifact(
    State(service): State<Service>,
    Path((id, artifact_id)): Path<(String, String)>,
    Query(q): Query<ArtifactQuery>,
) -> ApiResult<Response> {
    let state = service.state(&id)?;
    let meta = state
        .artifacts
        .get(&crate::crew::ArtifactId::new(artifact_id.clone()))
        .ok_or_else(|| ApiError::not_found(format!("artifact `{artifact_id}`")))?;
    let content = service
        .store()
        .blob(&id, &meta.content_hash)
        .ok()
        .flatten()
        .ok_or_else(|| ApiError::not_found(format!("content of `{artifact_id}`")))?;
    if q.raw {
        let bytes = crate::canonical::canonical_bytes(&content);
        return Ok((
            [
                (header::CONTENT_TYPE, "application/octet-stream".to_owned()),
                (header::ETAG, format!("\"{}\"", meta.content_hash)),
            ],
            bytes,
        )
            .into_response());
    }
    Ok(Json(json!({
        "artifact_id": artifact_id,
        "event_id": meta.event_id,
        "attempt": meta.attempt,
        "kind": meta.kind,
        "content_hash": meta.content_hash,
        "revoked": meta.revoked,
        "content": content,
    }))
    .into_response())
}

async fn get_gantt(State(service): State<Service>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let state = service.state(&id)?;
    Ok(Json(json!({ "rows": state.gantt, "makespan": state.makespan })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_request_accepts_preset_or_inline() {
        let preset: RunRequest = serde_json::from_value(json!({ "pipeline": "film" })).unwrap();
        assert_eq!(preset.pipeline, PipelineRef::Preset("film".into()));
        assert_eq!(preset.seed, 42);
        assert_eq!(preset.clock, ClockKind::Virtual);
        let inline: RunRequest = serde_json::from_value(json!({
            "pipeline": { "name": "p", "events": [{ "id": "a", "role": "generic" }] },
            "clock": "wall",
            "mode": "serial",
        }))
        .unwrap();
        assert!(matches!(inline.pipeline, PipelineRef::Inline(_)));
        assert_eq!(inline.mode, Mode::Serial);
    }

    #[test]
    fn invalid_pipelines_are_bad_requests() {
        let service = Service::new(Store::in_memory(), ServiceConfig::default());
        let err = service.start_run(RunRequest::preset("opera")).unwrap_err();
        assert_eq!(err.status, StatusCode::BAD_REQUEST);
        let cyclic: PipelineDef = serde_json::from_value(json!({
            "name": "loop",
            "events": [
                { "id": "a", "role": "generic", "deps": ["b"] },
                { "id": "b", "role": "generic", "deps": ["a"] },
            ],
        }))
        .unwrap();
        let mut request = RunRequest::preset("film");
        request.pipeline = PipelineRef::Inline(cyclic);
        let err = service.start_run(request).unwrap_err();
        assert!(err.message.contains("a -> b -> a"), "{}", err.message);
    }
}
