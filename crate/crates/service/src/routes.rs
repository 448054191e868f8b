use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gatecheck_core::api::{
    AnnotationSubmission, BackendHealthResponse, ErrorBody, EvaluateRequest, GateResponse, HealthResponse,
    MetricsQuery, NextItem, SessionInfo, SubmitResponse, TaxonomyView,
};
use gatecheck_core::annotation::derive_gold;
use gatecheck_core::metrics::Level;
use gatecheck_core::pipeline::{EvaluationFailure, Mode};
use serde::Deserialize;
use tower_http::services::ServeDir;

use crate::session::{Session, SubmitError};
use crate::AppState;

type Shared = Arc<AppState>;

pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self(status, ErrorBody::new(message))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl From<EvaluationFailure> for ApiError {
    fn from(f: EvaluationFailure) -> Self {
        ApiError(StatusCode::BAD_GATEWAY, ErrorBody::from(&f))
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    let ui = state.config.ui_dir.clone();
    let api = Router::new()
        .route("/health", get(health))
        .route("/v1/backend/health", get(backend_health))
        .route("/v1/taxonomy", get(taxonomy))
        .route("/v1/gate", post(gate))
        .route("/v1/evaluate", post(evaluate))
        .route("/v1/session", get(session_info))
        .route("/v1/annotation/next", get(next_item))
        .route("/v1/annotation/submit", post(submit))
        .route("/v1/annotation/export", get(export))
        .route("/v1/metrics", get(metrics))
        .route("/v1/schemas/{name}", get(schema))
        .with_state(state);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn session(state: &AppState) -> ApiResult<&Session> {
    state.session.as_ref().ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no review session loaded"))
}

async fn health(State(state): State<Shared>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        backend: state.evaluator.backend().describe(),
        session: state.session.as_ref().map(|s| s.id.clone()),
        annotations: state.session.as_ref().map_or(0, |s| s.store.snapshot().len()),
        templates: state.evaluator.templates().hashes(),
    })
}

async fn backend_health(State(state): State<Shared>) -> Json<BackendHealthResponse> {
    let backend = state.evaluator.backend();
    let status = backend.health_check(Duration::from_secs(5)).await;
    Json(BackendHealthResponse { backend: backend.describe(), status })
}

async fn taxonomy(State(state): State<Shared>) -> Json<TaxonomyView> {
    Json(TaxonomyView::from(state.evaluator.taxonomy().as_ref()))
}

async fn run(state: &AppState, body: Result<Json<EvaluateRequest>, JsonRejection>, mode: Mode) -> ApiResult<gatecheck_core::pipeline::EvaluationOutcome> {
    let Json(request) = body?;
    if request.input.trim().is_empty() || request.output.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "input and output must be non-empty"));
    }
    let _permit = state
        .capacity
        .try_acquire()
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "over capacity, retry later"))?;
    Ok(state.evaluator.run(&request.to_example(), mode).await?)
}

async fn gate(
    State(state): State<Shared>,
    body: Result<Json<EvaluateRequest>, JsonRejection>,
) -> ApiResult<Json<GateResponse>> {
    let outcome = run(&state, body, Mode::Gate).await?;
    let taxonomy = state.evaluator.taxonomy();
    Ok(Json(GateResponse {
        categories: outcome.categories.in_taxonomy_order(taxonomy).into_iter().map(String::from).collect(),
        binary_score: outcome.binary_score(),
        stage1_latency_ms: outcome.stage1_latency_ms,
    }))
}

async fn evaluate(
    State(state): State<Shared>,
    body: Result<Json<EvaluateRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let outcome = run(&state, body, Mode::Full).await?;
    Ok(Json(outcome).into_response())
}

async fn session_info(State(state): State<Shared>) -> ApiResult<Json<SessionInfo>> {
    let s = session(&state)?;
    Ok(Json(SessionInfo {
        id: s.id.clone(),
        taxonomy_version: s.taxonomy.version().to_string(),
        dimension_labels: s.dimension_labels.clone(),
        examples: s.dataset.len(),
        reviewable: s.reviewable(),
        annotations: s.store.snapshot().len(),
    }))
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

async fn next_item(
    State(state): State<Shared>,
    query: Result<Query<NextQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let s = session(&state)?;
    let Query(q) = query?;
    if q.annotator.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "annotator must not be empty"));
    }
    Ok(match s.next_for(q.annotator.trim()) {
        None => StatusCode::NO_CONTENT.into_response(),
        Some((index, outcome, remaining)) => Json(NextItem {
            example: s.dataset.examples[index].clone(),
            outcome: outcome.clone(),
            remaining,
        })
        .into_response(),
    })
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

async fn submit(
    State(state): State<Shared>,
    body: Result<Json<AnnotationSubmission>, JsonRejection>,
) -> ApiResult<Json<SubmitResponse>> {
    let s = session(&state)?;
    let Json(submission) = body?;
    let (accepted, record) = s.submit(submission.into_record(now_ms())).await.map_err(|e| match e {
        SubmitError::UnknownExample(_) => ApiError::new(StatusCode::NOT_FOUND, e.to_string()),
        SubmitError::Invalid(_) => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
        SubmitError::Io(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    })?;
    let report = s.outcome(&record.example_id).and_then(|o| o.report.clone()).unwrap_or_default();
    let derived_gold = derive_gold(&record, &report, Level::Sub).into_iter().collect();
    Ok(Json(SubmitResponse { accepted, derived_gold }))
}

async fn export(State(state): State<Shared>) -> ApiResult<Response> {
    let s = session(&state)?;
    let text = s
        .store
        .export()
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn metrics(
    State(state): State<Shared>,
    query: Result<Query<MetricsQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let s = session(&state)?;
    let Query(q) = query?;
    if let Some(requested) = &q.session {
        if *requested != s.id {
            return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {requested:?}")));
        }
    }
    let report = s
        .metrics(q.level.unwrap_or(Level::Sub))
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no annotations yet"))?;
    Ok(Json(report).into_response())
}

async fn schema(Path(name): Path<String>) -> ApiResult<Response> {
    let name = name.trim_end_matches(".json").trim_end_matches(".schema");
    let text = crate::schema(name).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no schema {name:?}")))?;
    Ok(([(header::CONTENT_TYPE, "application/schema+json")], text).into_response())
}
