//! Text-generation backends.
//!
//! [`HttpBackend`] speaks the common chat-completions JSON protocol.
//! [`MockBackend`] replays scripted answers with a simulated latency model and
//! is what tests and benchmarks run against.

mod http;
mod mock;

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{PromptText, Stage};

pub use http::{HttpBackend, HttpConfig, RetryPolicy, API_KEY_ENV};
pub use mock::{MockBackend, MockEntry, MockLatency, MockScript, MockScriptError};

pub const DEFAULT_MAX_CONCURRENCY: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
    /// Sampling seed forwarded to backends that accept one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DecodeParams {
    /// Greedy decoding with a small budget: stage 1 answers in a few tokens.
    pub fn stage1() -> Self {
        Self { temperature: 0.0, max_tokens: 16, stop: Vec::new(), seed: None }
    }

    pub fn stage2() -> Self {
        Self { max_tokens: 1024, ..Self::stage1() }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::One => Self::stage1(),
            Stage::Two => Self::stage2(),
        }
    }
}

/// One request to a backend. `stage` and `example_id` are routing metadata
/// used by the mock; HTTP backends only send the prompt.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub stage: Stage,
    pub example_id: Option<String>,
    pub prompt: PromptText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Model latency in milliseconds. Measured wall clock for HTTP backends,
    /// the simulated value for the mock.
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Timeout,
    Transport,
    Auth,
    Status,
    Malformed,
    Config,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("malformed response: missing {path}")]
    Malformed { path: String },
    #[error("credential missing: set {0}")]
    CredentialMissing(&'static str),
    #[error("no scripted response for stage {stage}, example {example_id:?}, prompt {prompt_sha256}")]
    Unscripted { stage: Stage, example_id: Option<String>, prompt_sha256: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn class(&self) -> ErrorClass {
        match self {
            BackendError::Timeout(_) => ErrorClass::Timeout,
            BackendError::Transport { .. } => ErrorClass::Transport,
            BackendError::Auth { .. } | BackendError::CredentialMissing(_) => ErrorClass::Auth,
            BackendError::Status { .. } => ErrorClass::Status,
            BackendError::Malformed { .. } => ErrorClass::Malformed,
            BackendError::Unscripted { .. } | BackendError::Config(_) => ErrorClass::Config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub reachable: bool,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_class: Option<ErrorClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(
        &self,
        request: &CompletionRequest,
        params: &DecodeParams,
    ) -> Result<CompletionResult, BackendError>;

    /// Short human-readable description, e.g. for run headers.
    fn describe(&self) -> String;

    /// Sends a one-token request and reports whether the backend answered.
    async fn health_check(&self, timeout: Duration) -> HealthStatus {
        let request = CompletionRequest {
            stage: Stage::One,
            example_id: Some(HEALTH_PROBE_ID.to_string()),
            prompt: PromptText::new("", "ping"),
        };
        let params = DecodeParams { max_tokens: 1, ..DecodeParams::stage1() };
        let started = std::time::Instant::now();
        let outcome = tokio::time::timeout(timeout, self.complete(&request, &params)).await;
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(Ok(r)) => HealthStatus { reachable: true, latency_ms: r.latency_ms, error_class: None, message: None },
            Ok(Err(e)) => HealthStatus {
                reachable: false,
                latency_ms: elapsed,
                error_class: Some(e.class()),
                message: Some(e.to_string()),
            },
            Err(_) => HealthStatus {
                reachable: false,
                latency_ms: elapsed,
                error_class: Some(ErrorClass::Timeout),
                message: Some(format!("no answer within {timeout:?}")),
            },
        }
    }
}

/// Example id used by health probes; mock scripts answer it automatically.
pub const HEALTH_PROBE_ID: &str = "__health__";
