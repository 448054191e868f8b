//! Commands that run against a live service through the client crate.

use std::path::Path;
use std::time::Duration;

use anyhow::anyhow;
use futures::stream::{self, StreamExt};
use gatecheck_client::{Client, ClientError};
use gatecheck_core::api::EvaluateRequest;
use gatecheck_core::datamodel::{CategorySet, Example};
use gatecheck_core::pipeline::{
    EvaluationFailure, EvaluationOutcome, FailureDetail, FailureKind, Mode, OutcomeRecord,
};
use gatecheck_core::prompt::{Stage, TemplateHashes};

use crate::cli::RemoteAction;
use crate::commands::{dataset, finish_outcomes};
use crate::exit::{Failure, OrFail, Outcome};
use crate::settings::Resolved;

const BUSY_RETRIES: u32 = 8;

/// Retries 503 answers with exponential backoff.
async fn with_retry<T, F, Fut>(mut call: F) -> Result<T, ClientError>
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = Result<T, ClientError>>,
{
    let mut attempt = 0;
    loop {
        match call().await {
            Err(e) if e.status() == Some(503) && attempt < BUSY_RETRIES => {
                tokio::time::sleep(Duration::from_millis(25 << attempt)).await;
                attempt += 1;
            }
            other => return other,
        }
    }
}

fn failed(example: &Example, err: ClientError) -> Result<OutcomeRecord, Failure> {
    match err {
        ClientError::Api { status: 502, body } => Ok(OutcomeRecord::Failed(EvaluationFailure {
            example_id: example.id.clone(),
            error: FailureDetail {
                stage: body.stage.unwrap_or(Stage::One),
                kind: body.kind.unwrap_or(FailureKind::Backend),
                class: body.class,
                message: body.error,
            },
        })),
        ClientError::Api { status, .. } if status < 500 => {
            Err(Failure::Invalid(anyhow!("example {}: {err}", example.id)))
        }
        other => Err(Failure::Io(anyhow!("example {}: {other}", example.id))),
    }
}

async fn one(client: &Client, example: &Example, mode: Mode, hashes: &TemplateHashes) -> Result<OutcomeRecord, Failure> {
    let request = EvaluateRequest::from(example);
    match mode {
        Mode::Full => match with_retry(|| client.evaluate(&request)).await {
            Ok(o) => Ok(OutcomeRecord::Ok(o)),
            Err(e) => failed(example, e),
        },
        Mode::Gate => match with_retry(|| client.gate(&request)).await {
            Ok(g) => Ok(OutcomeRecord::Ok(EvaluationOutcome {
                example_id: example.id.clone(),
                mode: Mode::Gate,
                categories: CategorySet(g.categories.into_iter().collect()),
                report: None,
                score: g.binary_score,
                stage1_latency_ms: g.stage1_latency_ms,
                stage2_latency_ms: None,
                template_hashes: hashes.clone(),
                diagnostics: Vec::new(),
            })),
            Err(e) => failed(example, e),
        },
    }
}

pub async fn evaluate(resolved: &Resolved, server: &str, path: &Path, mode: Mode, out: &Path, concurrency: usize) -> Outcome {
    let data = dataset(path, &resolved.taxonomy)?;
    let client = Client::new(server);
    let health = client.health().await.io()?;
    let results: Vec<Result<OutcomeRecord, Failure>> = stream::iter(&data.examples)
        .map(|e| one(&client, e, mode, &health.templates))
        .buffer_unordered(concurrency)
        .collect()
        .await;
    let mut records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    records.sort_by(|a, b| a.example_id().cmp(b.example_id()));
    let header = serde_json::json!({
        "server": client.base_url(),
        "backend": health.backend,
        "templates": health.templates,
    });
    finish_outcomes(&records, &header, out)
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("response serializes") + "\n"
}

pub async fn action(resolved: &Resolved, server: &str, action: RemoteAction) -> Outcome {
    let client = Client::new(server);
    let map = |e: ClientError| match e.status() {
        Some(s) if (400..500).contains(&s) => Failure::Invalid(e.into()),
        _ => Failure::Io(e.into()),
    };
    let text = match action {
        RemoteAction::Health => pretty(&client.health().await.map_err(map)?),
        RemoteAction::Gate { input, output } => {
            let request = EvaluateRequest::new(input, output);
            pretty(&with_retry(|| client.gate(&request)).await.map_err(map)?)
        }
        RemoteAction::Evaluate { input, output } => {
            let request = EvaluateRequest::new(input, output);
            pretty(&with_retry(|| client.evaluate(&request)).await.map_err(map)?)
        }
        RemoteAction::Metrics { level } => {
            let report = client.metrics(Some(level.into()), None).await.map_err(map)?;
            report.to_table(&resolved.taxonomy)
        }
        RemoteAction::ExportJournal => client.export_journal().await.map_err(map)?,
    };
    print!("{text}");
    Ok(())
}
