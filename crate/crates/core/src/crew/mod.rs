//! Crew workers and the film-production preset.
//!
//! Every event is executed by the worker registered for its role. Mock
//! workers derive their output from the event id, effective parameters, input
//! content hashes and the run seed, so re-running any prefix of a run yields
//! the same artifacts. Adapter workers forward the same request over a
//! pluggable transport.

mod adapter;
mod mock;
mod preset;
mod procedures;

pub use adapter::{
    AdapterInput, AdapterRequest, AdapterResponse, AdapterWorker, EndpointConfig, FnTransport, Transport,
    TransportError,
};
pub use mock::{DurationModel, MockWorker};
pub use preset::{feedback_preset, film_pipeline_preset, film_preset_toml, pipeline_preset, FILM_ROLES};
pub use procedures::{
    assign_emotions, build_edit_timeline, plan_long_shot, shot_length_from_voiceover, AudioMix, CrewError, Direction,
    EditTimeline, EmotionRule, EmotionRules, EmotionTag, ExtensionPlan, KeyframeAnchor, KeyframeSource, Segment,
    TimelineEntry, Transition,
};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::canonical_bytes;
use crate::graph::{EventId, EventSpec, Params, PipelineDef};
use crate::Time;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArtifactId(String);

impl ArtifactId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ArtifactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Script,
    SceneFrame,
    Dialogue,
    ShotPlan,
    VoiceTrack,
    FinalCut,
    Music,
    Generic,
}

impl ArtifactKind {
    pub fn for_role(role: &str) -> Self {
        match role {
            "scriptwriter" => Self::Script,
            "artist" => Self::SceneFrame,
            "actors" => Self::Dialogue,
            "action" => Self::ShotPlan,
            "voiceover" => Self::VoiceTrack,
            "post" => Self::FinalCut,
            "composer" => Self::Music,
            _ => Self::Generic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Producer {
    pub event_id: EventId,
    pub attempt: u32,
}

/// What a worker returns; wrapped into an [`Artifact`] by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactBody {
    pub kind: ArtifactKind,
    pub content: Value,
}

/// An immutable, content-addressed output of one event attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub id: ArtifactId,
    pub producer: Producer,
    pub kind: ArtifactKind,
    pub content: Value,
    pub content_hash: String,
}

impl Artifact {
    pub fn new(producer: Producer, body: ArtifactBody) -> Self {
        let content_hash = content_hash(&body.content);
        let id = ArtifactId::new(format!("{}.{}.{}", producer.event_id, producer.attempt, &content_hash[..12]));
        Self { id, producer, kind: body.kind, content: body.content, content_hash }
    }

    /// Canonical bytes of the content; what gets stored and hashed.
    pub fn content_bytes(&self) -> Vec<u8> {
        canonical_bytes(&self.content)
    }

    pub fn verify(&self) -> bool {
        content_hash(&self.content) == self.content_hash
    }
}

/// Hex sha256 of the canonical bytes, so clients can check downloads.
pub fn content_hash(content: &Value) -> String {
    hex::encode(Sha256::digest(canonical_bytes(content)))
}

/// Cooperative cancellation flag shared between the run loop and a worker.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Everything a worker needs for one execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRequest {
    pub event_id: EventId,
    pub role: String,
    pub attempt: u32,
    /// Event params with feedback amendments overlaid.
    pub params: Params,
    /// One artifact per dependency, in dependency id order.
    pub inputs: Vec<Artifact>,
    pub seed: u64,
}

impl ExecutionRequest {
    pub fn input(&self, kind: ArtifactKind) -> Option<&Artifact> {
        self.inputs.iter().find(|a| a.kind == kind)
    }
}

#[derive(Debug, Clone)]
pub struct ExecContext {
    pub cancel: CancelToken,
    /// Wall time per tick. `None` under the virtual clock, where the run loop
    /// accounts for duration and the worker returns immediately.
    pub pace: Option<std::time::Duration>,
    pub duration: Time,
}

impl ExecContext {
    pub fn virtual_time(duration: Time) -> Self {
        Self { cancel: CancelToken::new(), pace: None, duration }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkerError {
    #[error("execution cancelled")]
    Cancelled,
    #[error("missing input artifact from `{0}`")]
    MissingInput(EventId),
    #[error("adapter error: {message}")]
    Adapter { message: String, retryable: bool },
    #[error("worker failed: {0}")]
    Failed(String),
}

pub trait Worker: Send + Sync {
    /// Duration of an execution when the pipeline does not fix one.
    fn duration(&self, _request: &ExecutionRequest) -> Time {
        0
    }

    fn execute(&self, request: &ExecutionRequest, ctx: &ExecContext) -> Result<ArtifactBody, WorkerError>;
}

/// Builds the request for `event` and runs it, checking that every
/// dependency has an input artifact.
pub fn execute(
    worker: &dyn Worker,
    event: &EventSpec,
    attempt: u32,
    overlay: &Params,
    inputs: Vec<Artifact>,
    seed: u64,
    ctx: &ExecContext,
) -> Result<Artifact, WorkerError> {
    let request = build_request(event, attempt, overlay, inputs, seed)?;
    let body = worker.execute(&request, ctx)?;
    Ok(Artifact::new(Producer { event_id: event.id.clone(), attempt }, body))
}

pub(crate) fn build_request(
    event: &EventSpec,
    attempt: u32,
    overlay: &Params,
    mut inputs: Vec<Artifact>,
    seed: u64,
) -> Result<ExecutionRequest, WorkerError> {
    for dep in &event.dependencies {
        if !inputs.iter().any(|a| &a.producer.event_id == dep) {
            return Err(WorkerError::MissingInput(dep.clone()));
        }
    }
    inputs.retain(|a| event.dependencies.contains(&a.producer.event_id));
    inputs.sort_by(|a, b| a.producer.event_id.cmp(&b.producer.event_id));
    let mut params = event.params.clone();
    params.extend(overlay.iter().map(|(k, v)| (k.clone(), v.clone())));
    Ok(ExecutionRequest { event_id: event.id.clone(), role: event.role.clone(), attempt, params, inputs, seed })
}

/// How a role is staffed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub role: String,
    pub mode: WorkerMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerMode {
    Mock { duration: DurationModel },
    Adapter { endpoint: EndpointConfig },
}

/// Role → worker lookup.
#[derive(Clone, Default)]
pub struct WorkerRegistry {
    workers: BTreeMap<String, Arc<dyn Worker>>,
}

impl fmt::Debug for WorkerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorkerRegistry").field("roles", &self.workers.keys().collect::<Vec<_>>()).finish()
    }
}

impl WorkerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, role: impl Into<String>, worker: Arc<dyn Worker>) -> &mut Self {
        self.workers.insert(role.into(), worker);
        self
    }

    pub fn get(&self, role: &str) -> Option<&Arc<dyn Worker>> {
        self.workers.get(role)
    }

    pub fn roles(&self) -> impl Iterator<Item = &str> {
        self.workers.keys().map(String::as_str)
    }

    /// One mock worker per role used in `def`, with the pipeline's emotion
    /// table (or the default one) for dubbing.
    pub fn mock_for(def: &PipelineDef) -> Self {
        let rules = if def.emotion_rules.is_empty() {
            EmotionRules::default()
        } else {
            EmotionRules::from_table(def.emotion_rules.clone())
        };
        let mut registry = Self::new();
        for event in &def.events {
            if registry.get(&event.role).is_none() {
                let worker = MockWorker::new(&event.role, DurationModel::Fixed(1)).with_emotion_rules(rules.clone());
                registry.register(event.role.clone(), Arc::new(worker));
            }
        }
        registry
    }

    /// Builds workers from specs. Adapter specs need a transport.
    pub fn from_specs(specs: &[WorkerSpec], transport: Option<Arc<dyn Transport>>) -> Result<Self, CrewError> {
        let mut registry = Self::new();
        for spec in specs {
            let worker: Arc<dyn Worker> = match &spec.mode {
                WorkerMode::Mock { duration } => {
                    duration.validate()?;
                    Arc::new(MockWorker::new(&spec.role, duration.clone()))
                }
                WorkerMode::Adapter { endpoint } => {
                    let transport = transport.clone().ok_or_else(|| {
                        CrewError::InvalidParams(format!("adapter worker `{}` needs a transport", spec.role))
                    })?;
                    Arc::new(AdapterWorker::new(&spec.role, endpoint.clone(), transport))
                }
            };
            registry.register(spec.role.clone(), worker);
        }
        Ok(registry)
    }
}
