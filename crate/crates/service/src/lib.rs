//! HTTP service for online gating, full evaluation and expert review.
//!
//! Endpoints:
//!
//! | method | path                       | body / query                  |
//! |--------|----------------------------|-------------------------------|
//! | GET    | `/health`                  |                               |
//! | GET    | `/v1/backend/health`       |                               |
//! | GET    | `/v1/taxonomy`             |                               |
//! | POST   | `/v1/gate`                 | `EvaluateRequest`             |
//! | POST   | `/v1/evaluate`             | `EvaluateRequest`             |
//! | GET    | `/v1/session`              |                               |
//! | GET    | `/v1/annotation/next`      | `?annotator=`                 |
//! | POST   | `/v1/annotation/submit`    | `AnnotationSubmission`        |
//! | GET    | `/v1/annotation/export`    |                               |
//! | GET    | `/v1/metrics`              | `?session=&level=`            |
//! | GET    | `/v1/schemas/{name}`       |                               |
//!
//! Response bodies follow the JSON schemas in `schemas/`.

mod routes;
mod session;
mod store;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use gatecheck_core::pipeline::Evaluator;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

pub use routes::router;
pub use session::{Session, SessionError};
pub use store::AnnotationStore;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 64;

/// Published response schemas, by name.
pub const SCHEMAS: [(&str, &str); 9] = [
    ("error", include_str!("../schemas/error.schema.json")),
    ("health", include_str!("../schemas/health.schema.json")),
    ("gate", include_str!("../schemas/gate.schema.json")),
    ("outcome", include_str!("../schemas/outcome.schema.json")),
    ("session", include_str!("../schemas/session.schema.json")),
    ("next", include_str!("../schemas/next.schema.json")),
    ("submit", include_str!("../schemas/submit.schema.json")),
    ("metrics", include_str!("../schemas/metrics.schema.json")),
    ("taxonomy", include_str!("../schemas/taxonomy.schema.json")),
];

pub fn schema(name: &str) -> Option<&'static str> {
    SCHEMAS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Gate/evaluate requests served at once; more get 503.
    pub max_in_flight: usize,
    /// Directory of static review-UI assets served at `/`.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { max_in_flight: DEFAULT_MAX_IN_FLIGHT, ui_dir: None }
    }
}

pub struct AppState {
    pub evaluator: Evaluator,
    pub session: Option<Session>,
    pub config: ServiceConfig,
    capacity: Semaphore,
}

impl AppState {
    pub fn new(evaluator: Evaluator, session: Option<Session>, config: ServiceConfig) -> Arc<Self> {
        let capacity = Semaphore::new(config.max_in_flight.max(1));
        Arc::new(Self { evaluator, session, config, capacity })
    }
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
