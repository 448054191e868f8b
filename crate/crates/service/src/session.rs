//! A review session: a dataset, its outcomes, and the annotation journal.

use std::collections::BTreeMap;
use std::path::Path;

use gatecheck_core::annotation::{
    items_from_annotations, reviewed_report, AnnotationError, AnnotationRecord, JournalError,
    DEFAULT_DIMENSION_LABELS,
};
use gatecheck_core::bench::dataset_fingerprint;
use gatecheck_core::datamodel::{load_dataset, Dataset, DatasetError};
use gatecheck_core::metrics::{summarize_items, Level, MetricsReport};
use gatecheck_core::pipeline::{load_outcomes, EvaluationOutcome, OutcomeFileError, OutcomeRecord};
use gatecheck_core::taxonomy::Taxonomy;
use thiserror::Error;

use crate::store::AnnotationStore;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Outcomes(#[from] OutcomeFileError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("outcome for {0:?} has no matching dataset example")]
    UnknownOutcome(String),
}

pub struct Session {
    pub id: String,
    pub dataset: Dataset,
    pub outcomes: Vec<OutcomeRecord>,
    pub taxonomy: Taxonomy,
    pub dimension_labels: [String; 3],
    pub store: AnnotationStore,
    reviewable: BTreeMap<String, (usize, EvaluationOutcome)>,
}

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error("unknown example {0:?}")]
    UnknownExample(String),
    #[error(transparent)]
    Invalid(#[from] AnnotationError),
    #[error("journal write failed: {0}")]
    Io(#[from] std::io::Error),
}

impl Session {
    pub fn new(
        dataset: Dataset,
        outcomes: Vec<OutcomeRecord>,
        taxonomy: Taxonomy,
        store: AnnotationStore,
    ) -> Result<Self, SessionError> {
        let mut reviewable = BTreeMap::new();
        for r in &outcomes {
            let index = dataset
                .examples
                .iter()
                .position(|e| e.id == r.example_id())
                .ok_or_else(|| SessionError::UnknownOutcome(r.example_id().to_string()))?;
            if let Some(o) = r.outcome() {
                reviewable.insert(o.example_id.clone(), (index, o.clone()));
            }
        }
        let id = dataset_fingerprint(&dataset)[..12].to_string();
        Ok(Self {
            id,
            dataset,
            outcomes,
            taxonomy,
            dimension_labels: DEFAULT_DIMENSION_LABELS.map(String::from),
            store,
            reviewable,
        })
    }

    pub fn load(
        dataset: &Path,
        outcomes: &Path,
        journal: &Path,
        taxonomy: Taxonomy,
    ) -> Result<Self, SessionError> {
        let ds = load_dataset(dataset, &taxonomy)?;
        let out = load_outcomes(outcomes)?.records;
        let store = AnnotationStore::open(journal)?;
        Self::new(ds, out, taxonomy, store)
    }

    pub fn with_dimension_labels(mut self, labels: [String; 3]) -> Self {
        self.dimension_labels = labels;
        self
    }

    pub fn reviewable(&self) -> usize {
        self.reviewable.len()
    }

    /// Lowest-id reviewable example not yet annotated by `annotator`, with
    /// the number of such examples.
    pub fn next_for(&self, annotator: &str) -> Option<(usize, &EvaluationOutcome, usize)> {
        let index = self.store.snapshot();
        let mut pending = self.reviewable.iter().filter(|(id, _)| !index.is_annotated_by(id, annotator));
        let (_, (i, outcome)) = pending.next()?;
        Some((*i, outcome, 1 + pending.count()))
    }

    pub async fn submit(&self, record: AnnotationRecord) -> Result<(bool, AnnotationRecord), SubmitError> {
        let (_, outcome) = self
            .reviewable
            .get(&record.example_id)
            .ok_or_else(|| SubmitError::UnknownExample(record.example_id.clone()))?;
        let report = reviewed_report(outcome);
        let clean = gatecheck_core::annotation::validate_record(&record, &report, &self.taxonomy)?;
        let accepted = self.store.append(clean.clone()).await?;
        Ok((accepted, clean))
    }

    pub fn outcome(&self, example_id: &str) -> Option<&EvaluationOutcome> {
        self.reviewable.get(example_id).map(|(_, o)| o)
    }

    /// Metrics over annotated examples; None when nothing is annotated.
    pub fn metrics(&self, level: Level) -> Option<MetricsReport> {
        let index = self.store.snapshot();
        if index.is_empty() {
            return None;
        }
        let items = items_from_annotations(&self.dataset, &self.outcomes, &index, level);
        Some(summarize_items(&items, level, Vec::new()))
    }
}
