use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{Backend, BackendError, CompletionRequest, CompletionResult, DecodeParams, DEFAULT_MAX_CONCURRENCY};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "EVAL_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay_ms: 250, factor: 2 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let mult = u64::from(self.factor).saturating_pow(retry.saturating_sub(1));
        Duration::from_millis(self.base_delay_ms.saturating_mul(mult))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_ms: u64,
    pub max_concurrency: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "evaluator".into(),
            timeout_ms: 30_000,
            max_concurrency: DEFAULT_MAX_CONCURRENCY,
            retry: RetryPolicy::default(),
        }
    }
}

/// Chat-completions client: `POST {base_url}/chat/completions`, answer read
/// from `choices[0].message.content`.
pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::Client,
    permits: Semaphore,
}

enum Attempt {
    Done(Result<CompletionResult, BackendError>),
    Retry(BackendError),
}

impl HttpBackend {
    /// Builds a client taking the credential from `EVAL_API_KEY`.
    pub fn from_env(config: HttpConfig) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, key)
    }

    pub fn with_api_key(config: HttpConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        if config.max_concurrency == 0 || config.retry.max_attempts == 0 {
            return Err(BackendError::Config("max_concurrency and retry.max_attempts must be ≥ 1".into()));
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let permits = Semaphore::new(config.max_concurrency);
        Ok(Self { config, api_key, client, permits })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &CompletionRequest, params: &DecodeParams) -> Value {
        let mut messages = Vec::new();
        if !request.prompt.system.is_empty() {
            messages.push(json!({"role": "system", "content": request.prompt.system}));
        }
        messages.push(json!({"role": "user", "content": request.prompt.user}));
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if !params.stop.is_empty() {
            body["stop"] = json!(params.stop);
        }
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    async fn attempt(&self, key: &str, body: &Value, request: &CompletionRequest, attempt: u32) -> Attempt {
        let started = Instant::now();
        let sent = self.client.post(self.endpoint()).bearer_auth(key).json(body).send().await;
        let response = match sent {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(BackendError::Timeout(Duration::from_millis(self.config.timeout_ms)))
            }
            Err(e) => return Attempt::Retry(BackendError::Transport { attempts: attempt, message: e.to_string() }),
        };
        let status = response.status().as_u16();
        let text = match response.text().await {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(BackendError::Transport { attempts: attempt, message: e.to_string() }),
        };
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        match status {
            200..=299 => Attempt::Done(parse_completion(&text, request, latency_ms)),
            401 | 403 => Attempt::Done(Err(BackendError::Auth { status })),
            408 | 429 | 500..=599 => Attempt::Retry(BackendError::Status { status, attempts: attempt, body: snippet(&text) }),
            _ => Attempt::Done(Err(BackendError::Status { status, attempts: attempt, body: snippet(&text) })),
        }
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

fn parse_completion(text: &str, request: &CompletionRequest, latency_ms: f64) -> Result<CompletionResult, BackendError> {
    let malformed = |path: &str| BackendError::Malformed { path: path.to_string() };
    let value: Value = serde_json::from_str(text).map_err(|_| malformed("JSON body"))?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("choices[0].message.content"))?;
    let usage = |field: &str| value.pointer(&format!("/usage/{field}")).and_then(Value::as_u64);
    Ok(CompletionResult {
        text: content.to_string(),
        prompt_tokens: usage("prompt_tokens").unwrap_or(request.prompt.token_estimate as u64),
        completion_tokens: usage("completion_tokens")
            .unwrap_or_else(|| crate::prompt::estimate_tokens(content) as u64),
        latency_ms,
    })
}

fn with_attempts(err: BackendError, attempts: u32) -> BackendError {
    match err {
        BackendError::Transport { message, .. } => BackendError::Transport { attempts, message },
        BackendError::Status { status, body, .. } => BackendError::Status { status, attempts, body },
        other => other,
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(
        &self,
        request: &CompletionRequest,
        params: &DecodeParams,
    ) -> Result<CompletionResult, BackendError> {
        let key = self.api_key.as_deref().ok_or(BackendError::CredentialMissing(API_KEY_ENV))?;
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let body = self.body(request, params);
        let policy = self.config.retry;
        let mut attempt = 1;
        loop {
            match self.attempt(key, &body, request, attempt).await {
                Attempt::Done(result) => return result,
                Attempt::Retry(err) if attempt >= policy.max_attempts => return Err(with_attempts(err, attempt)),
                Attempt::Retry(err) => {
                    tracing::debug!(attempt, error = %err, "retrying chat completion");
                    tokio::time::sleep(policy.delay(attempt)).await;
                    attempt += 1;
                }
            }
        }
    }

    fn describe(&self) -> String {
        format!("http({}, model {})", self.config.base_url, self.config.model)
    }
}
