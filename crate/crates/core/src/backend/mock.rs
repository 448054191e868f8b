use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use super::{Backend, BackendError, CompletionRequest, CompletionResult, DecodeParams, DEFAULT_MAX_CONCURRENCY, HEALTH_PROBE_ID};
use crate::prompt::{estimate_tokens, Stage};

/// One line of a mock script file. Exactly one of `example_id` and
/// `prompt_sha256` must be set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Error)]
pub enum MockScriptError {
    #[error("cannot read mock script: {0}")]
    Io(#[from] std::io::Error),
    #[error("mock script line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Debug, Clone)]
struct Canned {
    response: String,
    completion_tokens: u64,
}

impl From<&MockEntry> for Canned {
    fn from(e: &MockEntry) -> Self {
        Canned {
            response: e.response.clone(),
            completion_tokens: e.completion_tokens.unwrap_or_else(|| estimate_tokens(&e.response) as u64),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockScript {
    by_example: HashMap<(Stage, String), Canned>,
    by_prompt: HashMap<String, Canned>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: &MockEntry) -> Result<(), String> {
        match (&entry.example_id, &entry.prompt_sha256) {
            (Some(id), None) => {
                self.by_example.insert((entry.stage, id.clone()), entry.into());
            }
            (None, Some(h)) => {
                self.by_prompt.insert(h.to_ascii_lowercase(), entry.into());
            }
            _ => return Err("exactly one of example_id and prompt_sha256 is required".into()),
        }
        Ok(())
    }

    /// Convenience for tests: script a response keyed by example id.
    pub fn with(mut self, stage: Stage, example_id: &str, response: &str, completion_tokens: Option<u64>) -> Self {
        self.insert(&MockEntry {
            stage,
            example_id: Some(example_id.to_string()),
            prompt_sha256: None,
            response: response.to_string(),
            completion_tokens,
        })
        .expect("keyed by example id");
        self
    }

    pub fn from_entries<'a>(entries: impl IntoIterator<Item = &'a MockEntry>) -> Result<Self, String> {
        let mut s = Self::new();
        for e in entries {
            s.insert(e)?;
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, MockScriptError> {
        let mut script = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| MockScriptError::Line { line: i + 1, message };
            let entry: MockEntry = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            script.insert(&entry).map_err(err)?;
        }
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MockScriptError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.by_example.len() + self.by_prompt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, request: &CompletionRequest) -> Option<&Canned> {
        self.by_prompt.get(&request.prompt.sha256()).or_else(|| {
            let id = request.example_id.as_ref()?;
            self.by_example.get(&(request.stage, id.clone()))
        })
    }
}

/// Simulated latency: `base_ms + per_token_ms * completion_tokens`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockLatency {
    pub base_ms: f64,
    pub per_token_ms: f64,
}

impl MockLatency {
    pub fn simulate(&self, completion_tokens: u64) -> f64 {
        self.base_ms + self.per_token_ms * completion_tokens as f64
    }
}

impl Default for MockLatency {
    fn default() -> Self {
        Self { base_ms: 5.0, per_token_ms: 2.0 }
    }
}

/// Deterministic scripted backend.
///
/// Identical requests always produce identical text and identical simulated
/// latency. With `real_time` the mock also sleeps for the simulated latency,
/// which makes timeouts observable.
pub struct MockBackend {
    script: MockScript,
    latency: MockLatency,
    real_time: bool,
    timeout: Option<Duration>,
    permits: Semaphore,
    stage1_calls: AtomicUsize,
    stage2_calls: AtomicUsize,
    simulated_total_ms: Mutex<f64>,
}

impl MockBackend {
    pub fn new(script: MockScript, latency: MockLatency) -> Self {
        Self {
            script,
            latency,
            real_time: false,
            timeout: None,
            permits: Semaphore::new(DEFAULT_MAX_CONCURRENCY),
            stage1_calls: AtomicUsize::new(0),
            stage2_calls: AtomicUsize::new(0),
            simulated_total_ms: Mutex::new(0.0),
        }
    }

    pub fn real_time(mut self, yes: bool) -> Self {
        self.real_time = yes;
        self
    }

    pub fn timeout(mut self, timeout: Option<Duration>) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn max_concurrency(mut self, n: usize) -> Self {
        self.permits = Semaphore::new(n.max(1));
        self
    }

    pub fn latency_model(&self) -> MockLatency {
        self.latency
    }

    pub fn calls(&self, stage: Stage) -> usize {
        match stage {
            Stage::One => self.stage1_calls.load(Ordering::SeqCst),
            Stage::Two => self.stage2_calls.load(Ordering::SeqCst),
        }
    }

    /// Sum of simulated latency over every answered call since the last reset.
    pub fn simulated_total_ms(&self) -> f64 {
        *self.simulated_total_ms.lock().unwrap()
    }

    pub fn reset_counters(&self) {
        self.stage1_calls.store(0, Ordering::SeqCst);
        self.stage2_calls.store(0, Ordering::SeqCst);
        *self.simulated_total_ms.lock().unwrap() = 0.0;
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn complete(
        &self,
        request: &CompletionRequest,
        _params: &DecodeParams,
    ) -> Result<CompletionResult, BackendError> {
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let probe;
        let canned = if request.example_id.as_deref() == Some(HEALTH_PROBE_ID) {
            probe = Canned { response: "ok".into(), completion_tokens: 1 };
            &probe
        } else {
            match request.stage {
                Stage::One => self.stage1_calls.fetch_add(1, Ordering::SeqCst),
                Stage::Two => self.stage2_calls.fetch_add(1, Ordering::SeqCst),
            };
            self.script.lookup(request).ok_or_else(|| BackendError::Unscripted {
                stage: request.stage,
                example_id: request.example_id.clone(),
                prompt_sha256: request.prompt.sha256(),
            })?
        };
        let simulated = self.latency.simulate(canned.completion_tokens);
        if let Some(limit) = self.timeout {
            if simulated > limit.as_secs_f64() * 1e3 {
                if self.real_time {
                    tokio::time::sleep(limit).await;
                }
                return Err(BackendError::Timeout(limit));
            }
        }
        if self.real_time {
            tokio::time::sleep(Duration::from_secs_f64(simulated / 1e3)).await;
        }
        *self.simulated_total_ms.lock().unwrap() += simulated;
        Ok(CompletionResult {
            text: canned.response.clone(),
            prompt_tokens: request.prompt.token_estimate as u64,
            completion_tokens: canned.completion_tokens,
            latency_ms: simulated,
        })
    }

    fn describe(&self) -> String {
        format!(
            "mock({} entries, base {} ms, {} ms/token)",
            self.script.len(),
            self.latency.base_ms,
            self.latency.per_token_ms
        )
    }
}
