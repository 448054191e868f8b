//! Request and response bodies of the HTTP service.

use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationRecord, FindingVerdict, MissedError};
use crate::backend::{ErrorClass, HealthStatus};
use crate::datamodel::Example;
use crate::metrics::{ErrorKey, Level};
use crate::pipeline::{EvaluationFailure, EvaluationOutcome, FailureKind};
use crate::prompt::{Stage, TemplateHashes};
use crate::taxonomy::{PrincipalCategory, SubErrorType, Taxonomy};

/// Task label given to ad-hoc examples that name none.
pub const ADHOC_TASK: &str = "adhoc";
/// Example id given to ad-hoc examples that name none.
pub const ADHOC_ID: &str = "request";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    /// Routing hint for scripted backends; echoed in the outcome.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_id: Option<String>,
}

impl EvaluateRequest {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Self {
        Self { input: input.into(), output: output.into(), task: None, example_id: None }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.example_id = Some(id.into());
        self
    }

    pub fn to_example(&self) -> Example {
        Example::new(
            self.example_id.clone().unwrap_or_else(|| ADHOC_ID.into()),
            self.task.clone().unwrap_or_else(|| ADHOC_TASK.into()).as_str(),
            self.input.clone(),
            self.output.clone(),
        )
    }
}

impl From<&Example> for EvaluateRequest {
    fn from(e: &Example) -> Self {
        Self {
            input: e.input.clone(),
            output: e.output.clone(),
            task: Some(e.task.as_str().to_string()),
            example_id: Some(e.id.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResponse {
    /// Flagged principal categories in taxonomy order.
    pub categories: Vec<String>,
    pub binary_score: i32,
    pub stage1_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<FailureKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ErrorClass>,
}

impl ErrorBody {
    pub fn new(error: impl Into<String>) -> Self {
        Self { error: error.into(), stage: None, kind: None, class: None }
    }
}

impl From<&EvaluationFailure> for ErrorBody {
    fn from(f: &EvaluationFailure) -> Self {
        Self {
            error: f.error.message.clone(),
            stage: Some(f.error.stage),
            kind: Some(f.error.kind),
            class: f.error.class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    pub annotations: usize,
    /// Hashes of the templates the server evaluates with.
    pub templates: TemplateHashes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendHealthResponse {
    pub backend: String,
    #[serde(flatten)]
    pub status: HealthStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub taxonomy_version: String,
    pub dimension_labels: [String; 3],
    pub examples: usize,
    /// Examples with a successful outcome, i.e. reviewable ones.
    pub reviewable: usize,
    pub annotations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextItem {
    pub example: Example,
    pub outcome: EvaluationOutcome,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSubmission {
    pub example_id: String,
    pub annotator: String,
    pub dimension_scores: [f64; 3],
    #[serde(default)]
    pub finding_verdicts: Vec<FindingVerdict>,
    #[serde(default)]
    pub missed_errors: Vec<MissedError>,
    /// Milliseconds since the Unix epoch; the server clock when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl AnnotationSubmission {
    pub fn into_record(self, now_ms: u64) -> AnnotationRecord {
        AnnotationRecord {
            example_id: self.example_id,
            annotator: self.annotator,
            dimension_scores: self.dimension_scores,
            finding_verdicts: self.finding_verdicts,
            missed_errors: self.missed_errors,
            timestamp: self.timestamp.unwrap_or(now_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    /// False when a newer record from the same annotator already exists.
    pub accepted: bool,
    /// Gold sub-errors derived from this record.
    pub derived_gold: Vec<ErrorKey>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyView {
    pub version: String,
    pub principals: Vec<PrincipalCategory>,
    pub sub_errors: Vec<SubErrorType>,
}

impl From<&Taxonomy> for TaxonomyView {
    fn from(t: &Taxonomy) -> Self {
        Self {
            version: t.version().to_string(),
            principals: t.principals().to_vec(),
            sub_errors: t.sub_errors().to_vec(),
        }
    }
}
