//! Expert review records and the gold sets derived from them.
//!
//! A reviewer scores an output on three dimensions, marks each reported
//! finding real or spurious, and lists errors the report missed. The gold
//! error set of an example is its real findings plus its missed errors.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Dataset, DiagnosticReport, MAX_HUMAN_SCORE};
use crate::metrics::{ErrorKey, ErrorSet, Level, MetricItem};
use crate::pipeline::{EvaluationOutcome, OutcomeRecord};
use crate::taxonomy::Taxonomy;

pub const DEFAULT_DIMENSION_LABELS: [&str; 3] = ["Reliability", "BiasToxicity", "Basic"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Real,
    Spurious,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingVerdict {
    pub finding_index: usize,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MissedError {
    pub principal: String,
    pub sub_type: String,
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub example_id: String,
    pub annotator: String,
    pub dimension_scores: [f64; 3],
    #[serde(default)]
    pub finding_verdicts: Vec<FindingVerdict>,
    #[serde(default)]
    pub missed_errors: Vec<MissedError>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl AnnotationRecord {
    pub fn human_score(&self) -> f64 {
        self.dimension_scores.iter().sum::<f64>() / 3.0
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("annotator must not be empty")]
    EmptyAnnotator,
    #[error("dimension score {index} is {value}, outside [0, 5]")]
    ScoreOutOfRange { index: usize, value: String },
    #[error("finding_index {index} out of range (report has {len} finding(s))")]
    FindingIndexOutOfRange { index: usize, len: usize },
    #[error("finding {0} has more than one verdict")]
    DuplicateVerdict(usize),
    #[error("finding {0} has no verdict")]
    MissingVerdict(usize),
    #[error("missed error {principal}/{sub_type}: {message}")]
    UnknownError { principal: String, sub_type: String, message: String },
}

/// Checks a record against the report it reviews and canonicalizes the
/// names of missed errors.
pub fn validate_record(
    record: &AnnotationRecord,
    report: &DiagnosticReport,
    taxonomy: &Taxonomy,
) -> Result<AnnotationRecord, AnnotationError> {
    if record.annotator.trim().is_empty() {
        return Err(AnnotationError::EmptyAnnotator);
    }
    for (index, &value) in record.dimension_scores.iter().enumerate() {
        if !(0.0..=MAX_HUMAN_SCORE).contains(&value) {
            return Err(AnnotationError::ScoreOutOfRange { index, value: value.to_string() });
        }
    }
    let len = report.findings.len();
    let mut seen = vec![false; len];
    for v in &record.finding_verdicts {
        if v.finding_index >= len {
            return Err(AnnotationError::FindingIndexOutOfRange { index: v.finding_index, len });
        }
        if std::mem::replace(&mut seen[v.finding_index], true) {
            return Err(AnnotationError::DuplicateVerdict(v.finding_index));
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(AnnotationError::MissingVerdict(i));
    }
    let mut clean = record.clone();
    clean.annotator = record.annotator.trim().to_string();
    clean.finding_verdicts.sort_by_key(|v| v.finding_index);
    for m in &mut clean.missed_errors {
        let sub = taxonomy.resolve_qualified(&m.principal, &m.sub_type).map_err(|e| {
            AnnotationError::UnknownError {
                principal: m.principal.clone(),
                sub_type: m.sub_type.clone(),
                message: e.to_string(),
            }
        })?;
        m.principal = sub.principal.clone();
        m.sub_type = sub.name.clone();
    }
    clean.missed_errors.sort();
    clean.missed_errors.dedup();
    Ok(clean)
}

/// Gold error set: findings judged real plus missed errors.
pub fn derive_gold(record: &AnnotationRecord, report: &DiagnosticReport, level: Level) -> ErrorSet {
    let key = |principal: &str, sub: &str| match level {
        Level::Principal => ErrorKey::principal(principal),
        Level::Sub => ErrorKey::sub(principal, sub),
    };
    let real = record
        .finding_verdicts
        .iter()
        .filter(|v| v.verdict == Verdict::Real)
        .filter_map(|v| report.findings.get(v.finding_index))
        .map(|f| key(&f.category, &f.sub_type));
    let missed = record.missed_errors.iter().map(|m| key(&m.principal, &m.sub_type));
    real.chain(missed).collect()
}

/// Report an annotation is checked against; empty when the outcome has none.
pub fn reviewed_report(outcome: &EvaluationOutcome) -> DiagnosticReport {
    outcome.report.clone().unwrap_or_default()
}

/// Effective annotations under last-write-wins per (annotator, example).
/// Newer timestamps win; on equal timestamps the later submission wins.
#[derive(Debug, Clone, Default)]
pub struct AnnotationIndex {
    entries: BTreeMap<(String, String), (u64, usize, AnnotationRecord)>,
    applied: usize,
}

impl AnnotationIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a AnnotationRecord>) -> Self {
        let mut index = Self::new();
        for r in records {
            index.apply(r.clone());
        }
        index
    }

    /// Returns whether the record is now the effective one for its key.
    pub fn apply(&mut self, record: AnnotationRecord) -> bool {
        let seq = self.applied;
        self.applied += 1;
        let key = (record.example_id.clone(), record.annotator.clone());
        match self.entries.get(&key) {
            Some((ts, _, _)) if *ts > record.timestamp => false,
            _ => {
                self.entries.insert(key, (record.timestamp, seq, record));
                true
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_annotated_by(&self, example_id: &str, annotator: &str) -> bool {
        self.entries.contains_key(&(example_id.to_string(), annotator.to_string()))
    }

    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.entries.values().map(|(_, _, r)| r)
    }

    /// One record per example: the most recent across annotators.
    pub fn latest_per_example(&self) -> BTreeMap<&str, &AnnotationRecord> {
        let mut best: BTreeMap<&str, (u64, usize, &AnnotationRecord)> = BTreeMap::new();
        for ((example, _), (ts, seq, record)) in &self.entries {
            let candidate = (*ts, *seq, record);
            match best.get(example.as_str()) {
                Some(&(bts, bseq, _)) if (bts, bseq) > (*ts, *seq) => {}
                _ => {
                    best.insert(example.as_str(), candidate);
                }
            }
        }
        best.into_iter().map(|(k, (_, _, r))| (k, r)).collect()
    }
}

/// Metric inputs for annotated examples: predictions from the outcomes,
/// gold and human scores from the annotations.
pub fn items_from_annotations(
    dataset: &Dataset,
    outcomes: &[OutcomeRecord],
    index: &AnnotationIndex,
    level: Level,
) -> Vec<MetricItem> {
    let by_id: HashMap<&str, &EvaluationOutcome> =
        outcomes.iter().filter_map(|r| r.outcome()).map(|o| (o.example_id.as_str(), o)).collect();
    let mut items = Vec::new();
    for (example_id, record) in index.latest_per_example() {
        let (Some(example), Some(outcome)) = (dataset.get(example_id), by_id.get(example_id)) else {
            continue;
        };
        let report = reviewed_report(outcome);
        let predicted = match level {
            Level::Principal => outcome.categories.iter().map(ErrorKey::principal).collect(),
            Level::Sub => crate::metrics::report_error_set(&report, level),
        };
        items.push(MetricItem {
            example_id: example_id.to_string(),
            task: example.task.clone(),
            predicted_score: outcome.score as f64,
            human_score: Some(record.human_score()),
            predicted: Some(predicted),
            gold: Some(derive_gold(record, &report, level)),
        });
    }
    items
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("cannot read journal: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal line {line}: {message}")]
    Line { line: usize, message: String },
}

/// Parses journal text. A final line without a newline that fails to parse
/// is treated as a torn write and skipped.
pub fn parse_journal(text: &str) -> Result<Vec<AnnotationRecord>, JournalError> {
    let mut records = Vec::new();
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => records.push(r),
            Err(_) if i + 1 == lines.len() && !complete => break,
            Err(e) => return Err(JournalError::Line { line: i + 1, message: e.to_string() }),
        }
    }
    Ok(records)
}

pub fn load_journal(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>, JournalError> {
    match std::fs::read_to_string(path) {
        Ok(text) => parse_journal(&text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}
