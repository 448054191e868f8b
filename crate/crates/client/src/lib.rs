//! Typed client for the gatecheck HTTP service.

use std::time::Duration;

use gatecheck_core::api::{
    AnnotationSubmission, BackendHealthResponse, ErrorBody, EvaluateRequest, GateResponse, HealthResponse,
    MetricsQuery, NextItem, SessionInfo, SubmitResponse, TaxonomyView,
};
use gatecheck_core::metrics::{Level, MetricsReport};
use gatecheck_core::pipeline::EvaluationOutcome;
use reqwest::{Method, RequestBuilder, Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server answered {status}: {}", body.error)]
    Api { status: u16, body: ErrorBody },
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status().map(|s| s.as_u16()),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self::with_timeout(base, Duration::from_secs(120))
    }

    pub fn with_timeout(base: impl Into<String>, timeout: Duration) -> Self {
        let http = reqwest::Client::builder().timeout(timeout).build().expect("client builds");
        Self { base: base.into().trim_end_matches('/').to_string(), http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{}", self.base, path))
    }

    async fn check(response: Response) -> Result<Response> {
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let text = response.text().await?;
        let body = serde_json::from_str(&text).unwrap_or_else(|_| ErrorBody::new(text));
        Err(ClientError::Api { status: status.as_u16(), body })
    }

    async fn json<T: DeserializeOwned>(builder: RequestBuilder) -> Result<T> {
        Ok(Self::check(builder.send().await?).await?.json().await?)
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::json(self.request(Method::POST, path).json(body)).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::json(self.request(Method::GET, path)).await
    }

    pub async fn health(&self) -> Result<HealthResponse> {
        self.get("/health").await
    }

    pub async fn backend_health(&self) -> Result<BackendHealthResponse> {
        self.get("/v1/backend/health").await
    }

    pub async fn taxonomy(&self) -> Result<TaxonomyView> {
        self.get("/v1/taxonomy").await
    }

    pub async fn gate(&self, request: &EvaluateRequest) -> Result<GateResponse> {
        self.post("/v1/gate", request).await
    }

    pub async fn evaluate(&self, request: &EvaluateRequest) -> Result<EvaluationOutcome> {
        self.post("/v1/evaluate", request).await
    }

    pub async fn session(&self) -> Result<SessionInfo> {
        self.get("/v1/session").await
    }

    /// The next item for `annotator`, or None when the queue is empty.
    pub async fn next_item(&self, annotator: &str) -> Result<Option<NextItem>> {
        let response = self.request(Method::GET, "/v1/annotation/next").query(&[("annotator", annotator)]).send().await?;
        let response = Self::check(response).await?;
        if response.status() == StatusCode::NO_CONTENT {
            return Ok(None);
        }
        Ok(Some(response.json().await?))
    }

    pub async fn submit(&self, submission: &AnnotationSubmission) -> Result<SubmitResponse> {
        self.post("/v1/annotation/submit", submission).await
    }

    /// The annotation journal as JSONL.
    pub async fn export_journal(&self) -> Result<String> {
        let response = Self::check(self.request(Method::GET, "/v1/annotation/export").send().await?).await?;
        Ok(response.text().await?)
    }

    pub async fn metrics(&self, level: Option<Level>, session: Option<&str>) -> Result<MetricsReport> {
        let query = MetricsQuery { session: session.map(String::from), level };
        Self::json(self.request(Method::GET, "/v1/metrics").query(&query)).await
    }

    /// Unparsed exchange: status and body text. For callers that inspect
    /// responses byte for byte.
    pub async fn raw(&self, method: Method, path: &str, body: Option<&serde_json::Value>) -> Result<(u16, String)> {
        let mut builder = self.request(method, path);
        if let Some(b) = body {
            builder = builder.json(b);
        }
        let response = builder.send().await?;
        let status = response.status().as_u16();
        Ok((status, response.text().await?))
    }
}

pub use reqwest::Method as HttpMethod;
