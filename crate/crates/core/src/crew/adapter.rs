use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{ArtifactBody, ArtifactKind, ExecContext, ExecutionRequest, Worker, WorkerError};
use crate::graph::{EventId, Params};
use crate::Time;

/// Where an external service lives. Credentials are referenced by name and
/// resolved by the transport, never stored in pipeline files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub address: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credentials_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterInput {
    pub event_id: EventId,
    pub kind: ArtifactKind,
    pub content_hash: String,
    pub content: Value,
}

/// Wire request: one per execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub role: String,
    pub event_id: EventId,
    pub attempt: u32,
    pub params: Params,
    pub inputs: Vec<AdapterInput>,
    pub seed: u64,
}

impl From<&ExecutionRequest> for AdapterRequest {
    fn from(req: &ExecutionRequest) -> Self {
        Self {
            role: req.role.clone(),
            event_id: req.event_id.clone(),
            attempt: req.attempt,
            params: req.params.clone(),
            inputs: req
                .inputs
                .iter()
                .map(|a| AdapterInput {
                    event_id: a.producer.event_id.clone(),
                    kind: a.kind,
                    content_hash: a.content_hash.clone(),
                    content: a.content.clone(),
                })
                .collect(),
            seed: req.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AdapterResponse {
    Artifact { kind: ArtifactKind, content: Value },
    Error { message: String, retryable: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transport error: {message}")]
pub struct TransportError {
    pub message: String,
    pub retryable: bool,
}

/// Moves one encoded request to an endpoint and returns the encoded reply.
pub trait Transport: Send + Sync {
    fn exchange(&self, endpoint: &EndpointConfig, request: &[u8]) -> Result<Vec<u8>, TransportError>;
}

type Handler = dyn Fn(AdapterRequest) -> AdapterResponse + Send + Sync;

/// In-process transport backed by a closure. Requests and responses still
/// pass through their JSON encoding.
#[derive(Clone)]
pub struct FnTransport(Arc<Handler>);

impl FnTransport {
    pub fn new(handler: impl Fn(AdapterRequest) -> AdapterResponse + Send + Sync + 'static) -> Self {
        Self(Arc::new(handler))
    }
}

impl fmt::Debug for FnTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnTransport")
    }
}

impl Transport for FnTransport {
    fn exchange(&self, _endpoint: &EndpointConfig, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        let request: AdapterRequest = serde_json::from_slice(request)
            .map_err(|e| TransportError { message: format!("bad request: {e}"), retryable: false })?;
        Ok(serde_json::to_vec(&(self.0)(request)).expect("response serializes"))
    }
}

/// Worker that delegates to an external service.
#[derive(Clone)]
pub struct AdapterWorker {
    role: String,
    endpoint: EndpointConfig,
    transport: Arc<dyn Transport>,
    duration: Time,
}

impl fmt::Debug for AdapterWorker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdapterWorker").field("role", &self.role).field("endpoint", &self.endpoint).finish()
    }
}

impl AdapterWorker {
    pub fn new(role: impl Into<String>, endpoint: EndpointConfig, transport: Arc<dyn Transport>) -> Self {
        Self { role: role.into(), endpoint, transport, duration: 1 }
    }

    /// Ticks charged per call when the pipeline does not fix a duration.
    pub fn with_duration(mut self, duration: Time) -> Self {
        self.duration = duration;
        self
    }
}

impl Worker for AdapterWorker {
    fn duration(&self, _request: &ExecutionRequest) -> Time {
        self.duration
    }

    fn execute(&self, request: &ExecutionRequest, ctx: &ExecContext) -> Result<ArtifactBody, WorkerError> {
        if ctx.cancel.is_cancelled() {
            return Err(WorkerError::Cancelled);
        }
        let body = serde_json::to_vec(&AdapterRequest::from(request)).expect("request serializes");
        let reply = self
            .transport
            .exchange(&self.endpoint, &body)
            .map_err(|e| WorkerError::Adapter { message: e.message, retryable: e.retryable })?;
        if ctx.cancel.is_cancelled() {
            return Err(WorkerError::Cancelled);
        }
        let response: AdapterResponse = serde_json::from_slice(&reply).map_err(|e| WorkerError::Adapter {
            message: format!("undecodable response from {}: {e}", self.endpoint.address),
            retryable: false,
        })?;
        match response {
            AdapterResponse::Artifact { content, .. } if !content.is_object() => {
                Err(WorkerError::Adapter { message: "artifact content must be an object".into(), retryable: false })
            }
            AdapterResponse::Artifact { kind, content } => Ok(ArtifactBody { kind, content }),
            AdapterResponse::Error { message, retryable } => Err(WorkerError::Adapter { message, retryable }),
        }
    }
}
