#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use gatecheck_client::Client;
use gatecheck_core::backend::{MockBackend, MockLatency, MockScript};
use gatecheck_core::datamodel::{Dataset, DiagnosticReport, Example, Finding, Location};
use gatecheck_core::parser::render_report_text;
use gatecheck_core::pipeline::{run_batch, Evaluator, EvaluatorConfig, Mode, OutcomeRecord};
use gatecheck_core::prompt::{Stage, StageTemplates};
use gatecheck_core::taxonomy::{default_taxonomy, BASIC, RELIABILITY};
use gatecheck_service::{serve, AnnotationStore, AppState, ServiceConfig, Session};
use tokio::sync::oneshot;

pub const OUTPUT: &str = "The the offer ends today. Prices are lower than ever before.";

pub fn finding(category: &str, sub: &str, quote: &str, severity: i32) -> Finding {
    Finding {
        category: category.into(),
        sub_type: sub.into(),
        location: Location::quote(quote),
        explanation: "reason".into(),
        severity,
    }
}

/// a: clean; b: one Basic finding; c: Basic + Reliability findings.
pub fn script() -> MockScript {
    let b = DiagnosticReport::from_findings(vec![finding(BASIC, "fluency", "The the", -2)]);
    let c = DiagnosticReport::from_findings(vec![
        finding(BASIC, "fluency", "The the", -1),
        finding(RELIABILITY, "inaccuracy", "lower than ever", -3),
    ]);
    MockScript::new()
        .with(Stage::One, "a", "none", Some(1))
        .with(Stage::One, "b", "Basic", Some(2))
        .with(Stage::Two, "b", &render_report_text(&b), Some(120))
        .with(Stage::One, "c", "Reliability, Basic", Some(5))
        .with(Stage::Two, "c", &render_report_text(&c), Some(150))
        .with(Stage::One, "slow", "Basic", Some(2))
        .with(Stage::Two, "slow", "Score: 0", Some(100_000))
}

pub fn dataset() -> Dataset {
    Dataset::new(
        "default-1",
        ["a", "b", "c"].iter().map(|id| Example::new(*id, "DG", "Write an ad.", OUTPUT)).collect(),
    )
}

pub fn evaluator(mock: MockBackend) -> Evaluator {
    Evaluator::new(
        Arc::new(mock),
        Arc::new(default_taxonomy()),
        Arc::new(StageTemplates::default()),
        EvaluatorConfig::default(),
    )
}

pub fn mock() -> MockBackend {
    MockBackend::new(script(), MockLatency::default()).timeout(Some(Duration::from_secs(10)))
}

pub async fn outcomes() -> Vec<OutcomeRecord> {
    run_batch(&evaluator(mock()), &dataset(), Mode::Full, 2).await.unwrap()
}

pub struct Running {
    pub client: Client,
    stop: Option<oneshot::Sender<()>>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Running {
    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.handle.await.unwrap().unwrap();
    }
}

pub async fn start(state: Arc<AppState>) -> Running {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel();
    let handle = tokio::spawn(serve(listener, state, async {
        let _ = rx.await;
    }));
    Running { client: Client::new(format!("http://{addr}")), stop: Some(tx), handle }
}

pub async fn start_plain(config: ServiceConfig) -> Running {
    start(AppState::new(evaluator(mock()), None, config)).await
}

pub async fn start_with_session(journal: &Path) -> Running {
    let store = AnnotationStore::open(journal).unwrap();
    let session = Session::new(dataset(), outcomes().await, default_taxonomy(), store).unwrap();
    start(AppState::new(evaluator(mock()), Some(session), ServiceConfig::default())).await
}

pub fn assert_schema(name: &str, body: &str) {
    let schema: serde_json::Value = serde_json::from_str(gatecheck_service::schema(name).unwrap()).unwrap();
    let instance: serde_json::Value = serde_json::from_str(body).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name} schema violations: {errors:?}\nbody: {body}");
}
