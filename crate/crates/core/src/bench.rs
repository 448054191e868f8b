//! Latency benchmarking over the cascade.
//!
//! Two channels are kept apart. The model channel sums the latencies the
//! backend reports per call, which for the mock backend are simulated and
//! exactly reproducible. The wall-clock channel measures each example end to
//! end on this machine.

use std::fmt::Write as _;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datamodel::{Dataset, Task};
use crate::pipeline::{EvaluationFailure, EvaluationOutcome, Evaluator, Mode};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("repetitions must be at least 1")]
    ZeroRepetitions,
    #[error("concurrency must be at least 1")]
    ZeroConcurrency,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("bench aborted: {0}")]
    Failed(#[from] EvaluationFailure),
    #[error("stats were measured on different datasets ({0} vs {1})")]
    DatasetMismatch(String, String),
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean_ms_per_example: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

impl Distribution {
    fn of(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean_ms_per_example: mean(samples),
            p50: percentile(&sorted, 50.0),
            p90: percentile(&sorted, 90.0),
            p99: percentile(&sorted, 99.0),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub task: String,
    /// Samples: examples × repetitions.
    pub n: usize,
    pub repetitions: usize,
    pub model: Distribution,
    /// Stage means over all samples; stage 2 counts 0 when skipped, so the
    /// two add up to the model mean.
    pub stage1_mean_ms: f64,
    pub stage2_mean_ms: f64,
    pub stage2_invocation_fraction: f64,
    pub wall_clock: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mode: Mode,
    pub backend: String,
    pub concurrency: usize,
    pub warmup: usize,
    pub repetitions: usize,
    pub dataset_fingerprint: String,
    pub per_task: Vec<StatsRow>,
    pub overall: StatsRow,
}

#[derive(Debug, Clone)]
struct Sample {
    task: Task,
    stage1_ms: f64,
    stage2_ms: Option<f64>,
    wall_ms: f64,
}

fn row(task: &str, samples: &[&Sample], repetitions: usize) -> StatsRow {
    let model: Vec<f64> = samples.iter().map(|s| s.stage1_ms + s.stage2_ms.unwrap_or(0.0)).collect();
    let wall: Vec<f64> = samples.iter().map(|s| s.wall_ms).collect();
    let s1: Vec<f64> = samples.iter().map(|s| s.stage1_ms).collect();
    let s2: Vec<f64> = samples.iter().map(|s| s.stage2_ms.unwrap_or(0.0)).collect();
    let invoked = samples.iter().filter(|s| s.stage2_ms.is_some()).count();
    StatsRow {
        task: task.to_string(),
        n: samples.len(),
        repetitions,
        model: Distribution::of(&model),
        stage1_mean_ms: mean(&s1),
        stage2_mean_ms: mean(&s2),
        stage2_invocation_fraction: invoked as f64 / samples.len() as f64,
        wall_clock: Distribution::of(&wall),
    }
}

/// Order-independent identity of a dataset's example ids.
pub fn dataset_fingerprint(dataset: &Dataset) -> String {
    let mut ids: Vec<&str> = dataset.examples.iter().map(|e| e.id.as_str()).collect();
    ids.sort_unstable();
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

async fn pass(
    evaluator: &Evaluator,
    dataset: &Dataset,
    mode: Mode,
    concurrency: usize,
) -> Result<Vec<(EvaluationOutcome, Task, f64)>, EvaluationFailure> {
    let mut results: Vec<_> = stream::iter(dataset.examples.iter())
        .map(|example| async move {
            let started = Instant::now();
            let outcome = evaluator.run(example, mode).await;
            let wall = started.elapsed().as_secs_f64() * 1e3;
            outcome.map(|o| (o, example.task.clone(), wall))
        })
        .buffer_unordered(concurrency)
        .collect()
        .await;
    results.sort_by(|a, b| match (a, b) {
        (Ok(a), Ok(b)) => a.0.example_id.cmp(&b.0.example_id),
        (Err(_), Ok(_)) => std::cmp::Ordering::Less,
        (Ok(_), Err(_)) => std::cmp::Ordering::Greater,
        (Err(a), Err(b)) => a.example_id.cmp(&b.example_id),
    });
    results.into_iter().collect()
}

/// Runs `warmup` untimed passes, then `repetitions` timed passes over the
/// dataset. Any failed example aborts the bench.
pub async fn run_bench(
    evaluator: &Evaluator,
    dataset: &Dataset,
    mode: Mode,
    warmup: usize,
    repetitions: usize,
    concurrency: usize,
) -> Result<LatencyStats, BenchError> {
    if repetitions == 0 {
        return Err(BenchError::ZeroRepetitions);
    }
    if concurrency == 0 {
        return Err(BenchError::ZeroConcurrency);
    }
    if dataset.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    for _ in 0..warmup {
        pass(evaluator, dataset, mode, concurrency).await?;
    }
    let mut samples = Vec::with_capacity(dataset.len() * repetitions);
    for _ in 0..repetitions {
        for (outcome, task, wall_ms) in pass(evaluator, dataset, mode, concurrency).await? {
            samples.push(Sample {
                task,
                stage1_ms: outcome.stage1_latency_ms,
                stage2_ms: outcome.stage2_latency_ms,
                wall_ms,
            });
        }
    }

    let mut tasks: Vec<Task> = samples.iter().map(|s| s.task.clone()).collect();
    tasks.sort_by(|a, b| a.display_rank().cmp(&b.display_rank()));
    tasks.dedup();
    let per_task = tasks
        .iter()
        .map(|t| {
            let members: Vec<&Sample> = samples.iter().filter(|s| &s.task == t).collect();
            row(t.as_str(), &members, repetitions)
        })
        .collect();
    let all: Vec<&Sample> = samples.iter().collect();
    Ok(LatencyStats {
        mode,
        backend: evaluator.backend().describe(),
        concurrency,
        warmup,
        repetitions,
        dataset_fingerprint: dataset_fingerprint(dataset),
        per_task,
        overall: row(crate::metrics::AVERAGE_LABEL, &all, repetitions),
    })
}

impl LatencyStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    /// Per-task rows plus the overall row, milliseconds to one decimal.
    pub fn to_table(&self) -> String {
        let rows: Vec<&StatsRow> = self.per_task.iter().chain(std::iter::once(&self.overall)).collect();
        let mut out = format!("mode={} concurrency={} repetitions={}\n", self.mode, self.concurrency, self.repetitions);
        let _ = writeln!(
            out,
            "{:<6} {:>6} {:>10} {:>9} {:>9} {:>9} {:>10} {:>10} {:>8} {:>10}",
            "task", "n", "model ms", "p50", "p90", "p99", "stage1", "stage2", "s2 frac", "wall ms"
        );
        for r in rows {
            let _ = writeln!(
                out,
                "{:<6} {:>6} {:>10.1} {:>9.1} {:>9.1} {:>9.1} {:>10.1} {:>10.1} {:>8.3} {:>10.1}",
                r.task,
                r.n,
                r.model.mean_ms_per_example,
                r.model.p50,
                r.model.p90,
                r.model.p99,
                r.stage1_mean_ms,
                r.stage2_mean_ms,
                r.stage2_invocation_fraction,
                r.wall_clock.mean_ms_per_example
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub task: String,
    pub baseline_ms: f64,
    pub candidate_ms: f64,
    pub delta_ms: f64,
    /// baseline / candidate; above 1 means the candidate is faster.
    pub speedup: f64,
    pub wall_baseline_ms: f64,
    pub wall_candidate_ms: f64,
    pub wall_speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_mode: Mode,
    pub candidate_mode: Mode,
    pub rows: Vec<ComparisonRow>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

fn compare_row(task: &str, a: &StatsRow, b: &StatsRow) -> ComparisonRow {
    ComparisonRow {
        task: task.to_string(),
        baseline_ms: a.model.mean_ms_per_example,
        candidate_ms: b.model.mean_ms_per_example,
        delta_ms: b.model.mean_ms_per_example - a.model.mean_ms_per_example,
        speedup: ratio(a.model.mean_ms_per_example, b.model.mean_ms_per_example),
        wall_baseline_ms: a.wall_clock.mean_ms_per_example,
        wall_candidate_ms: b.wall_clock.mean_ms_per_example,
        wall_speedup: ratio(a.wall_clock.mean_ms_per_example, b.wall_clock.mean_ms_per_example),
    }
}

/// Side-by-side comparison of two runs over the same dataset.
pub fn compare(baseline: &LatencyStats, candidate: &LatencyStats) -> Result<Comparison, BenchError> {
    if baseline.dataset_fingerprint != candidate.dataset_fingerprint {
        return Err(BenchError::DatasetMismatch(
            baseline.dataset_fingerprint.clone(),
            candidate.dataset_fingerprint.clone(),
        ));
    }
    let mut rows: Vec<ComparisonRow> = baseline
        .per_task
        .iter()
        .filter_map(|a| {
            let b = candidate.per_task.iter().find(|b| b.task == a.task)?;
            Some(compare_row(&a.task, a, b))
        })
        .collect();
    rows.push(compare_row(&baseline.overall.task, &baseline.overall, &candidate.overall));
    Ok(Comparison { baseline_mode: baseline.mode, candidate_mode: candidate.mode, rows })
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut out = format!("baseline={} candidate={}\n", self.baseline_mode, self.candidate_mode);
        let _ = writeln!(
            out,
            "{:<6} {:>12} {:>12} {:>10} {:>9} {:>9}",
            "task", "baseline ms", "candidate ms", "delta", "speedup", "wall x"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<6} {:>12.1} {:>12.1} {:>10.1} {:>9.2} {:>9.2}",
                r.task, r.baseline_ms, r.candidate_ms, r.delta_ms, r.speedup, r.wall_speedup
            );
        }
        out
    }
}
