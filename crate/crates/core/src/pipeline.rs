//! The two-stage cascade.
//!
//! Stage 1 asks the backend which principal categories occur in the output.
//! When none do, evaluation stops there with an empty report and score 0.
//! Otherwise stage 2 asks for a diagnostic report focused on the flagged
//! categories, and the score is the sum of the finding severities.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{Backend, BackendError, CompletionRequest, DecodeParams, ErrorClass};
use crate::datamodel::{CategorySet, Dataset, DiagnosticReport, Example};
use crate::parser::{parse_stage1, parse_stage2, Diagnostic, ParseMode};
use crate::prompt::{render_stage1, render_stage2, PromptOptions, Stage, StageTemplates, TemplateHashes};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gate,
    Full,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Gate => "gate",
            Mode::Full => "full",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gate" => Ok(Mode::Gate),
            "full" => Ok(Mode::Full),
            other => Err(format!("unknown mode {other:?} (expected gate or full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDiagnostic {
    pub stage: Stage,
    #[serde(flatten)]
    pub diagnostic: Diagnostic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutcome {
    pub example_id: String,
    pub mode: Mode,
    pub categories: CategorySet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<DiagnosticReport>,
    /// Severity sum in full mode; 0 or -1 in gate mode.
    pub score: i32,
    pub stage1_latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_latency_ms: Option<f64>,
    pub template_hashes: TemplateHashes,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<StageDiagnostic>,
}

impl EvaluationOutcome {
    pub fn binary_score(&self) -> i32 {
        if self.categories.is_empty() {
            0
        } else {
            -1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Prompt,
    Backend,
    Parse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureDetail {
    pub stage: Stage,
    pub kind: FailureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ErrorClass>,
    pub message: String,
}

/// An example that could not be evaluated, with the failing stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("example {example_id}: stage {} {:?} failure: {}", error.stage, error.kind, error.message)]
pub struct EvaluationFailure {
    pub example_id: String,
    pub error: FailureDetail,
}

impl EvaluationFailure {
    fn new(example: &Example, stage: Stage, kind: FailureKind, message: impl ToString) -> Self {
        Self {
            example_id: example.id.clone(),
            error: FailureDetail { stage, kind, class: None, message: message.to_string() },
        }
    }

    fn backend(example: &Example, stage: Stage, err: &BackendError) -> Self {
        let mut f = Self::new(example, stage, FailureKind::Backend, err);
        f.error.class = Some(err.class());
        f
    }
}

/// One line of an outcomes file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OutcomeRecord {
    Ok(EvaluationOutcome),
    Failed(EvaluationFailure),
}

impl OutcomeRecord {
    pub fn example_id(&self) -> &str {
        match self {
            OutcomeRecord::Ok(o) => &o.example_id,
            OutcomeRecord::Failed(f) => &f.example_id,
        }
    }

    pub fn outcome(&self) -> Option<&EvaluationOutcome> {
        match self {
            OutcomeRecord::Ok(o) => Some(o),
            OutcomeRecord::Failed(_) => None,
        }
    }
}

impl From<Result<EvaluationOutcome, EvaluationFailure>> for OutcomeRecord {
    fn from(r: Result<EvaluationOutcome, EvaluationFailure>) -> Self {
        match r {
            Ok(o) => OutcomeRecord::Ok(o),
            Err(f) => OutcomeRecord::Failed(f),
        }
    }
}

pub fn aggregate_score(report: &DiagnosticReport) -> i32 {
    report.findings.iter().map(|f| f.severity).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    pub parse_mode: ParseMode,
    pub prompt: PromptOptions,
    pub stage1: DecodeParams,
    pub stage2: DecodeParams,
    /// Drop stage-2 findings whose category was not flagged by stage 1.
    /// They are kept, with a warning, by default.
    pub drop_unflagged_findings: bool,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            parse_mode: ParseMode::Strict,
            prompt: PromptOptions::default(),
            stage1: DecodeParams::stage1(),
            stage2: DecodeParams::stage2(),
            drop_unflagged_findings: false,
        }
    }
}

/// Runs the cascade for single examples. Cheap to clone and share.
#[derive(Clone)]
pub struct Evaluator {
    backend: Arc<dyn Backend>,
    taxonomy: Arc<Taxonomy>,
    templates: Arc<StageTemplates>,
    config: Arc<EvaluatorConfig>,
}

impl Evaluator {
    pub fn new(
        backend: Arc<dyn Backend>,
        taxonomy: Arc<Taxonomy>,
        templates: Arc<StageTemplates>,
        config: EvaluatorConfig,
    ) -> Self {
        Self { backend, taxonomy, templates, config: Arc::new(config) }
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    pub fn taxonomy(&self) -> &Arc<Taxonomy> {
        &self.taxonomy
    }

    pub fn templates(&self) -> &StageTemplates {
        &self.templates
    }

    pub fn config(&self) -> &EvaluatorConfig {
        &self.config
    }

    async fn stage1(
        &self,
        example: &Example,
    ) -> Result<(CategorySet, f64, Vec<StageDiagnostic>), EvaluationFailure> {
        let prompt = render_stage1(&self.templates.stage1, &self.taxonomy, example, &self.config.prompt)
            .map_err(|e| EvaluationFailure::new(example, Stage::One, FailureKind::Prompt, e))?;
        let request = CompletionRequest { stage: Stage::One, example_id: Some(example.id.clone()), prompt };
        let result = self
            .backend
            .complete(&request, &self.config.stage1)
            .await
            .map_err(|e| EvaluationFailure::backend(example, Stage::One, &e))?;
        let (categories, diags) = parse_stage1(&result.text, &self.taxonomy, self.config.parse_mode)
            .map_err(|e| EvaluationFailure::new(example, Stage::One, FailureKind::Parse, e))?;
        let diags = diags.into_iter().map(|diagnostic| StageDiagnostic { stage: Stage::One, diagnostic }).collect();
        Ok((categories, result.latency_ms, diags))
    }

    /// Stage 1 only; the score is 0 for clean output and -1 otherwise.
    pub async fn gate(&self, example: &Example) -> Result<EvaluationOutcome, EvaluationFailure> {
        let (categories, latency, diagnostics) = self.stage1(example).await?;
        let mut outcome = EvaluationOutcome {
            example_id: example.id.clone(),
            mode: Mode::Gate,
            categories,
            report: None,
            score: 0,
            stage1_latency_ms: latency,
            stage2_latency_ms: None,
            template_hashes: self.templates.hashes(),
            diagnostics,
        };
        outcome.score = outcome.binary_score();
        Ok(outcome)
    }

    /// Both stages, skipping stage 2 when stage 1 flags nothing.
    pub async fn evaluate(&self, example: &Example) -> Result<EvaluationOutcome, EvaluationFailure> {
        let (categories, stage1_latency_ms, mut diagnostics) = self.stage1(example).await?;
        let mut outcome = EvaluationOutcome {
            example_id: example.id.clone(),
            mode: Mode::Full,
            categories,
            report: Some(DiagnosticReport::default()),
            score: 0,
            stage1_latency_ms,
            stage2_latency_ms: None,
            template_hashes: self.templates.hashes(),
            diagnostics: Vec::new(),
        };
        if outcome.categories.is_empty() {
            outcome.diagnostics = diagnostics;
            return Ok(outcome);
        }

        let fail = |kind, e: &dyn fmt::Display| EvaluationFailure::new(example, Stage::Two, kind, e);
        let prompt = render_stage2(
            &self.templates.stage2,
            &self.taxonomy,
            example,
            &outcome.categories,
            &self.config.prompt,
        )
        .map_err(|e| fail(FailureKind::Prompt, &e))?;
        let request = CompletionRequest { stage: Stage::Two, example_id: Some(example.id.clone()), prompt };
        let result = self
            .backend
            .complete(&request, &self.config.stage2)
            .await
            .map_err(|e| EvaluationFailure::backend(example, Stage::Two, &e))?;
        let (mut report, parse_diags) =
            parse_stage2(&result.text, &self.taxonomy, &example.output, self.config.parse_mode)
                .map_err(|e| fail(FailureKind::Parse, &e))?;
        diagnostics.extend(parse_diags.into_iter().map(|diagnostic| StageDiagnostic { stage: Stage::Two, diagnostic }));

        let flagged = &outcome.categories;
        let mut kept = Vec::with_capacity(report.findings.len());
        for (i, finding) in report.findings.drain(..).enumerate() {
            if flagged.contains(&finding.category) {
                kept.push(finding);
                continue;
            }
            let action = if self.config.drop_unflagged_findings { "dropped" } else { "kept" };
            diagnostics.push(StageDiagnostic {
                stage: Stage::Two,
                diagnostic: Diagnostic {
                    line: 0,
                    rule: "reconciliation".into(),
                    message: format!(
                        "finding {} has category {} which stage 1 did not flag; {action}",
                        i + 1,
                        finding.category
                    ),
                    recovered: true,
                },
            });
            if !self.config.drop_unflagged_findings {
                kept.push(finding);
            }
        }
        let report = DiagnosticReport::from_findings(kept);
        outcome.score = aggregate_score(&report);
        outcome.report = Some(report);
        outcome.stage2_latency_ms = Some(result.latency_ms);
        outcome.diagnostics = diagnostics;
        Ok(outcome)
    }

    pub async fn run(&self, example: &Example, mode: Mode) -> Result<EvaluationOutcome, EvaluationFailure> {
        match mode {
            Mode::Gate => self.gate(example).await,
            Mode::Full => self.evaluate(example).await,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BatchError {
    #[error("concurrency must be at least 1")]
    ZeroConcurrency,
}

/// Evaluates every example with at most `concurrency` in flight. Results are
/// ordered by example id; failures are recorded inline.
pub async fn run_batch(
    evaluator: &Evaluator,
    dataset: &Dataset,
    mode: Mode,
    concurrency: usize,
) -> Result<Vec<OutcomeRecord>, BatchError> {
    if concurrency == 0 {
        return Err(BatchError::ZeroConcurrency);
    }
    let mut records: Vec<OutcomeRecord> = stream::iter(dataset.examples.iter())
        .map(|example| async move { OutcomeRecord::from(evaluator.run(example, mode).await) })
        .buffer_unordered(concurrency)
        .collect()
        .await;
    records.sort_by(|a, b| a.example_id().cmp(b.example_id()));
    Ok(records)
}

const HEADER_KEY: &str = "run_config";

/// Serializes outcome records as JSONL, optionally preceded by a
/// `{"run_config": ...}` header line.
pub fn outcomes_to_jsonl(records: &[OutcomeRecord], header: Option<&Value>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        let mut obj = serde_json::Map::new();
        obj.insert(HEADER_KEY.into(), h.clone());
        out.push_str(&Value::Object(obj).to_string());
        out.push('\n');
    }
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("outcome serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Error)]
pub enum OutcomeFileError {
    #[error("cannot read outcomes: {0}")]
    Io(#[from] std::io::Error),
    #[error("outcomes line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("duplicate outcome for example {0:?}")]
    Duplicate(String),
}

pub struct OutcomeFile {
    pub header: Option<Value>,
    pub records: Vec<OutcomeRecord>,
}

pub fn parse_outcomes(text: &str) -> Result<OutcomeFile, OutcomeFileError> {
    let mut header = None;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| OutcomeFileError::Line { line: i + 1, message: e.to_string() })?;
        if let Some(h) = value.get(HEADER_KEY) {
            header = Some(h.clone());
            continue;
        }
        let record: OutcomeRecord = serde_json::from_value(value)
            .map_err(|e| OutcomeFileError::Line { line: i + 1, message: e.to_string() })?;
        if !seen.insert(record.example_id().to_string()) {
            return Err(OutcomeFileError::Duplicate(record.example_id().to_string()));
        }
        records.push(record);
    }
    Ok(OutcomeFile { header, records })
}

pub fn load_outcomes(path: impl AsRef<Path>) -> Result<OutcomeFile, OutcomeFileError> {
    parse_outcomes(&std::fs::read_to_string(path)?)
}
