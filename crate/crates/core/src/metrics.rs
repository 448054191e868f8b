//! Correlation and report-quality statistics.
//!
//! Rank correlation is Kendall's tau-b, computed with Knight's
//! O(n log n) merge-sort method. Linear correlation is the population
//! Pearson coefficient, computed in two passes. EC and VR are set-based
//! indicators over (predicted, gold) error sets; EC′ is per-category recall.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Dataset, DiagnosticReport, Example, GoldAnnotation, Task};
use crate::pipeline::{Mode, OutcomeRecord};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least 2 observations are required (got {0})")]
    TooFew(usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("correlation undefined: every value in one input is tied")]
    AllTied,
    #[error("correlation undefined: zero variance in one input")]
    ZeroVariance,
    #[error("no (predicted, gold) pairs")]
    NoPairs,
    #[error("no gold errors in any pair")]
    NoGoldErrors,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooFew(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

fn pairs_of(count: u64) -> u64 {
    count * count.saturating_sub(1) / 2
}

/// Sum of t(t-1)/2 over runs of equal adjacent elements under `eq`.
fn tied_pairs<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += pairs_of(run);
            run = 1;
        }
    }
    total + pairs_of(run)
}

/// Stable merge sort of `v` by value, returning the number of inversions
/// (pairs moved past a strictly smaller element).
fn sort_counting_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_counting_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's tau-b.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    let n = x.len();
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let total = pairs_of(n as u64);
    let ties_x = tied_pairs(&pairs, |a, b| a.0 == b.0);
    let ties_xy = tied_pairs(&pairs, |a, b| a.0 == b.0 && a.1 == b.1);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = sort_counting_swaps(&mut ys, &mut buf);
    let ties_y = tied_pairs(&ys, |a, b| a == b);

    if ties_x == total || ties_y == total {
        return Err(MetricError::AllTied);
    }
    // concordant - discordant = total - tx - ty + txy - 2 * discordant
    let numerator = total as f64 - ties_x as f64 - ties_y as f64 + ties_xy as f64 - 2.0 * swaps as f64;
    let denominator = ((total - ties_x) as f64 * (total - ties_y) as f64).sqrt();
    Ok((numerator / denominator).clamp(-1.0, 1.0))
}

/// Pearson's correlation with population moments.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Fraction of pairs whose gold set is contained in the predicted set.
/// Pairs are `(predicted, gold)`.
pub fn error_coverage<T: Ord>(pairs: &[(BTreeSet<T>, BTreeSet<T>)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::NoPairs);
    }
    let covered = pairs.iter().filter(|(p, g)| g.is_subset(p)).count();
    Ok(covered as f64 / pairs.len() as f64)
}

/// Fraction of pairs whose predicted errors all appear in gold.
pub fn veridicality_rate<T: Ord>(pairs: &[(BTreeSet<T>, BTreeSet<T>)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::NoPairs);
    }
    let veridical = pairs.iter().filter(|(p, g)| p.is_subset(g)).count();
    Ok(veridical as f64 / pairs.len() as f64)
}

/// An element of a predicted or gold error set. At principal level the
/// sub-type is absent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ErrorKey {
    pub principal: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_type: Option<String>,
}

impl ErrorKey {
    pub fn principal(name: impl Into<String>) -> Self {
        Self { principal: name.into(), sub_type: None }
    }

    pub fn sub(principal: impl Into<String>, sub_type: impl Into<String>) -> Self {
        Self { principal: principal.into(), sub_type: Some(sub_type.into()) }
    }
}

impl fmt::Display for ErrorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sub_type {
            Some(s) => write!(f, "{}/{}", self.principal, s),
            None => f.write_str(&self.principal),
        }
    }
}

pub type ErrorSet = BTreeSet<ErrorKey>;

/// Per-category hit and total counts of gold errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageCount {
    pub predicted_true: usize,
    pub gold: usize,
}

impl CoverageCount {
    pub fn ratio(&self) -> f64 {
        self.predicted_true as f64 / self.gold as f64
    }
}

fn coverage_counts(pairs: &[(ErrorSet, ErrorSet)]) -> BTreeMap<String, CoverageCount> {
    let mut counts: BTreeMap<String, CoverageCount> = BTreeMap::new();
    for (predicted, gold) in pairs {
        for key in gold {
            let c = counts.entry(key.principal.clone()).or_default();
            c.gold += 1;
            if predicted.contains(key) {
                c.predicted_true += 1;
            }
        }
    }
    counts
}

/// EC′ for every principal category with at least one gold error. Categories
/// outside the taxonomy are reported under their own name.
pub fn per_category_coverage(
    pairs: &[(ErrorSet, ErrorSet)],
    taxonomy: &Taxonomy,
) -> Result<Vec<(String, f64)>, MetricError> {
    let counts = coverage_counts(pairs);
    if counts.is_empty() {
        return Err(MetricError::NoGoldErrors);
    }
    Ok(order_categories(counts, taxonomy).into_iter().map(|(k, c)| (k, c.ratio())).collect())
}

fn order_categories<V>(map: BTreeMap<String, V>, taxonomy: &Taxonomy) -> Vec<(String, V)> {
    let mut v: Vec<(String, V)> = map.into_iter().collect();
    v.sort_by_key(|(k, _)| (taxonomy.principal_rank(k).unwrap_or(usize::MAX), k.clone()));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Principal,
    Sub,
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "principal" => Ok(Level::Principal),
            "sub" => Ok(Level::Sub),
            other => Err(format!("unknown level {other:?} (expected principal or sub)")),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Principal => "principal",
            Level::Sub => "sub",
        })
    }
}

pub fn report_error_set(report: &DiagnosticReport, level: Level) -> ErrorSet {
    report
        .findings
        .iter()
        .map(|f| match level {
            Level::Principal => ErrorKey::principal(&f.category),
            Level::Sub => ErrorKey::sub(&f.category, &f.sub_type),
        })
        .collect()
}

pub fn gold_error_set(gold: &GoldAnnotation, level: Level) -> ErrorSet {
    match level {
        Level::Principal => gold.categories.iter().map(ErrorKey::principal).collect(),
        Level::Sub => report_error_set(&gold.report, level),
    }
}

/// Everything summarize needs to know about one evaluated example.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricItem {
    pub example_id: String,
    pub task: Task,
    pub predicted_score: f64,
    pub human_score: Option<f64>,
    pub predicted: Option<ErrorSet>,
    pub gold: Option<ErrorSet>,
}

/// Averages unrounded; the text table rounds for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub task: String,
    pub n: usize,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    pub n_scored: usize,
    pub ec: Option<f64>,
    pub vr: Option<f64>,
    pub n_gold: usize,
    pub ec_prime: BTreeMap<String, f64>,
    pub ec_prime_counts: BTreeMap<String, CoverageCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: Level,
    pub per_task: Vec<MetricsRow>,
    pub average: MetricsRow,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub const AVERAGE_LABEL: &str = "Avg.";

fn weighted_mean(values: impl Iterator<Item = (Option<f64>, usize)>) -> Option<f64> {
    let (mut sum, mut weight) = (0.0, 0usize);
    for (v, w) in values {
        if let Some(v) = v {
            sum += v * w as f64;
            weight += w;
        }
    }
    (weight > 0).then(|| sum / weight as f64)
}

fn row_for(task: &str, items: &[&MetricItem], notes: &mut Vec<String>) -> MetricsRow {
    let scored: Vec<(f64, f64)> =
        items.iter().filter_map(|i| i.human_score.map(|h| (i.predicted_score, h))).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = scored.iter().copied().unzip();
    let mut correlation = |name: &str, r: Result<f64, MetricError>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{task}: {name} unavailable: {e}"));
            None
        }
    };
    let (tau, rho) = if scored.is_empty() {
        notes.push(format!("{task}: tau/rho unavailable: no human scores"));
        (None, None)
    } else {
        (correlation("tau", kendall_tau_b(&xs, &ys)), correlation("rho", pearson(&xs, &ys)))
    };

    let pairs: Vec<(ErrorSet, ErrorSet)> = items
        .iter()
        .filter_map(|i| Some((i.predicted.clone()?, i.gold.clone()?)))
        .collect();
    if pairs.is_empty() {
        notes.push(format!("{task}: EC/VR unavailable: no examples with both predicted and gold error sets"));
    }
    let counts = coverage_counts(&pairs);
    MetricsRow {
        task: task.to_string(),
        n: items.len(),
        tau,
        rho,
        n_scored: scored.len(),
        ec: error_coverage(&pairs).ok(),
        vr: veridicality_rate(&pairs).ok(),
        n_gold: pairs.len(),
        ec_prime: counts.iter().map(|(k, c)| (k.clone(), c.ratio())).collect(),
        ec_prime_counts: counts,
    }
}

fn average_row(rows: &[MetricsRow]) -> MetricsRow {
    let mut pooled: BTreeMap<String, CoverageCount> = BTreeMap::new();
    for r in rows {
        for (k, c) in &r.ec_prime_counts {
            let p = pooled.entry(k.clone()).or_default();
            p.gold += c.gold;
            p.predicted_true += c.predicted_true;
        }
    }
    MetricsRow {
        task: AVERAGE_LABEL.to_string(),
        n: rows.iter().map(|r| r.n).sum(),
        tau: weighted_mean(rows.iter().map(|r| (r.tau, r.n_scored))),
        rho: weighted_mean(rows.iter().map(|r| (r.rho, r.n_scored))),
        n_scored: rows.iter().map(|r| r.n_scored).sum(),
        ec: weighted_mean(rows.iter().map(|r| (r.ec, r.n_gold))),
        vr: weighted_mean(rows.iter().map(|r| (r.vr, r.n_gold))),
        n_gold: rows.iter().map(|r| r.n_gold).sum(),
        ec_prime: pooled.iter().map(|(k, c)| (k.clone(), c.ratio())).collect(),
        ec_prime_counts: pooled,
    }
}

/// Groups items by task and computes every metric per task plus an average
/// row weighted by the number of examples each metric used.
pub fn summarize_items(items: &[MetricItem], level: Level, mut notes: Vec<String>) -> MetricsReport {
    let mut tasks: Vec<&Task> = items.iter().map(|i| &i.task).collect::<BTreeSet<_>>().into_iter().collect();
    tasks.sort_by(|a, b| a.display_rank().cmp(&b.display_rank()));
    let rows: Vec<MetricsRow> = tasks
        .iter()
        .map(|t| {
            let members: Vec<&MetricItem> = items.iter().filter(|i| &i.task == *t).collect();
            row_for(t.as_str(), &members, &mut notes)
        })
        .collect();
    let average = average_row(&rows);
    MetricsReport { level, per_task: rows, average, notes }
}

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("outcome for {0:?} has no matching dataset example")]
    UnknownOutcome(String),
    #[error("dataset example {0:?} has no outcome")]
    MissingOutcome(String),
}

/// The human score of an example: the explicit overall score, else the mean
/// of the three dimension scores.
pub fn human_score_of(example: &Example) -> Option<f64> {
    example.human_score.or_else(|| example.human_dimension_scores.map(|d| d.iter().sum::<f64>() / 3.0))
}

/// Pairs outcomes with dataset examples. Ids must match one-to-one; failed
/// outcomes are excluded with a note.
pub fn items_from_outcomes(
    dataset: &Dataset,
    outcomes: &[OutcomeRecord],
    level: Level,
) -> Result<(Vec<MetricItem>, Vec<String>), AlignmentError> {
    let by_id: HashMap<&str, &Example> = dataset.examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    let mut failed = 0;
    let mut gate_at_sub = false;
    for record in outcomes {
        let id = record.example_id();
        let example = by_id.get(id).ok_or_else(|| AlignmentError::UnknownOutcome(id.to_string()))?;
        seen.insert(id);
        let Some(outcome) = record.outcome() else {
            failed += 1;
            continue;
        };
        let predicted = match (level, &outcome.report) {
            (Level::Principal, _) => Some(outcome.categories.iter().map(ErrorKey::principal).collect()),
            (Level::Sub, Some(report)) => Some(report_error_set(report, level)),
            (Level::Sub, None) => {
                gate_at_sub |= outcome.mode == Mode::Gate;
                None
            }
        };
        items.push(MetricItem {
            example_id: id.to_string(),
            task: example.task.clone(),
            predicted_score: outcome.score as f64,
            human_score: human_score_of(example),
            predicted,
            gold: example.gold.as_ref().map(|g| gold_error_set(g, level)),
        });
    }
    if let Some(missing) = dataset.examples.iter().find(|e| !seen.contains(e.id.as_str())) {
        return Err(AlignmentError::MissingOutcome(missing.id.clone()));
    }
    let mut notes = Vec::new();
    if failed > 0 {
        notes.push(format!("{failed} example(s) failed evaluation and are excluded"));
    }
    if gate_at_sub {
        notes.push("gate-mode outcomes carry no report; sub-level EC/VR need full-mode outcomes".into());
    }
    Ok((items, notes))
}

pub fn summarize(
    outcomes: &[OutcomeRecord],
    dataset: &Dataset,
    level: Level,
) -> Result<MetricsReport, AlignmentError> {
    let (items, notes) = items_from_outcomes(dataset, outcomes, level)?;
    Ok(summarize_items(&items, level, notes))
}

impl MetricsReport {
    /// Canonical JSON: fields in declaration order, maps sorted by key.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table with tasks as columns and percentages to one
    /// decimal. Unavailable values print as "-".
    pub fn to_table(&self, taxonomy: &Taxonomy) -> String {
        let rows: Vec<&MetricsRow> = self.per_task.iter().chain(std::iter::once(&self.average)).collect();
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", v * 100.0));

        let mut categories: BTreeMap<String, ()> = BTreeMap::new();
        for r in &rows {
            for k in r.ec_prime.keys() {
                categories.insert(k.clone(), ());
            }
        }
        let categories = order_categories(categories, taxonomy);

        let mut lines: Vec<(String, Vec<String>)> = vec![
            ("tau (%)".into(), rows.iter().map(|r| pct(r.tau)).collect()),
            ("rho (%)".into(), rows.iter().map(|r| pct(r.rho)).collect()),
            ("EC (%)".into(), rows.iter().map(|r| pct(r.ec)).collect()),
            ("VR (%)".into(), rows.iter().map(|r| pct(r.vr)).collect()),
        ];
        for (cat, _) in &categories {
            lines.push((format!("EC' {cat} (%)"), rows.iter().map(|r| pct(r.ec_prime.get(cat).copied())).collect()));
        }
        lines.push(("n".into(), rows.iter().map(|r| r.n.to_string()).collect()));

        let label_width = lines.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(6);
        let widths: Vec<usize> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| lines.iter().map(|(_, v)| v[i].len()).max().unwrap_or(0).max(r.task.chars().count()))
            .collect();

        let mut out = String::new();
        let _ = write!(out, "{:<label_width$}", format!("[{}]", self.level));
        for (r, w) in rows.iter().zip(&widths) {
            let _ = write!(out, "  {:>w$}", r.task);
        }
        out.push('\n');
        for (label, values) in &lines {
            let pad = label_width - label.chars().count();
            out.push_str(label);
            out.push_str(&" ".repeat(pad));
            for (v, w) in values.iter().zip(&widths) {
                let _ = write!(out, "  {v:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cmp::Ordering;
    use crate::taxonomy::{default_taxonomy, BASIC, BIAS_TOXICITY, RELIABILITY};
    use proptest::prelude::*;

    fn kendall_tau_b_naive(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
        check_pair(x, y)?;
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                match (x[i].total_cmp(&x[j]), y[i].total_cmp(&y[j])) {
                    (Ordering::Equal, Ordering::Equal) => {}
                    (Ordering::Equal, _) => tx += 1,
                    (_, Ordering::Equal) => ty += 1,
                    (a, b) if a == b => c += 1,
                    _ => d += 1,
                }
            }
        }
        let denom = (((c + d + tx) * (c + d + ty)) as f64).sqrt();
        if denom == 0.0 {
            return Err(MetricError::AllTied);
        }
        Ok((c - d) as f64 / denom)
    }

    fn set(keys: &[&str]) -> BTreeSet<String> {
        keys.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tau_examples() {
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((kendall_tau_b(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(kendall_tau_b(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricError::AllTied));
        assert_eq!(kendall_tau_b(&[1.0], &[1.0]), Err(MetricError::TooFew(1)));
        assert_eq!(kendall_tau_b(&[1.0, 2.0], &[1.0]), Err(MetricError::LengthMismatch(2, 1)));
        assert_eq!(kendall_tau_b(&[1.0, f64::NAN], &[1.0, 2.0]), Err(MetricError::NonFinite));
    }

    #[test]
    fn tau_with_ties_hand_computed() {
        // pairs: (1,1)(1,2)(2,1)(2,2): C=1 (1,1)-(2,2); D=1 (1,2)-(2,1);
        // tx=2, ty=2, txy=0 -> (1-1)/sqrt(4*4) = 0
        assert_eq!(kendall_tau_b(&[1.0, 1.0, 2.0, 2.0], &[1.0, 2.0, 1.0, 2.0]).unwrap(), 0.0);
        // x=[0,0,-1,-3], y=[5,4,4,1]: C=4, D=0, tx=1, ty=1 -> 4/sqrt(5*5) = 0.8
        let t = kendall_tau_b(&[0.0, 0.0, -1.0, -3.0], &[5.0, 4.0, 4.0, 1.0]).unwrap();
        assert!((t - 0.8).abs() < 1e-15, "{t}");
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 9.0 / (2.0 * 21f64.sqrt())).abs() < 1e-12, "{r}");
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]), Err(MetricError::ZeroVariance));
    }

    #[test]
    fn coverage_examples() {
        let same = vec![(set(&["a"]), set(&["a"])), (set(&["b", "c"]), set(&["b", "c"]))];
        assert_eq!(error_coverage(&same).unwrap(), 1.0);
        assert_eq!(veridicality_rate(&same).unwrap(), 1.0);
        let ec = vec![(set(&["a", "b"]), set(&["a"])), (set(&["a"]), set(&["a", "b"]))];
        assert_eq!(error_coverage(&ec).unwrap(), 0.5);
        assert_eq!(error_coverage(&[(set(&[]), set(&[]))]).unwrap(), 1.0);
        let vr = vec![(set(&["a"]), set(&["a", "b"])), (set(&["a", "c"]), set(&["a"]))];
        assert_eq!(veridicality_rate(&vr).unwrap(), 0.5);
        assert_eq!(veridicality_rate(&[(set(&[]), set(&["a"]))]).unwrap(), 1.0);
        assert_eq!(error_coverage::<String>(&[]), Err(MetricError::NoPairs));
        assert_eq!(veridicality_rate::<String>(&[]), Err(MetricError::NoPairs));
    }

    #[test]
    fn per_category_examples() {
        let tax = default_taxonomy();
        let k = |p: &str, s: &str| ErrorKey::sub(p, s);
        let pairs = vec![
            ([k(BASIC, "fluency")].into_iter().collect(), [k(BASIC, "fluency")].into_iter().collect()),
            (
                [k(RELIABILITY, "hallucination")].into_iter().collect(),
                [k(BASIC, "coherence"), k(RELIABILITY, "hallucination")].into_iter().collect(),
            ),
        ];
        let m = per_category_coverage(&pairs, &tax).unwrap();
        assert_eq!(m, vec![(RELIABILITY.to_string(), 1.0), (BASIC.to_string(), 0.5)]);
        assert!(!m.iter().any(|(c, _)| c == BIAS_TOXICITY));
        let none: Vec<(ErrorSet, ErrorSet)> = vec![(ErrorSet::new(), ErrorSet::new())];
        assert_eq!(per_category_coverage(&none, &tax), Err(MetricError::NoGoldErrors));
    }

    fn item(id: &str, task: &str, pred: &[&str], gold: &[&str]) -> MetricItem {
        MetricItem {
            example_id: id.into(),
            task: task.into(),
            predicted_score: -(pred.len() as f64),
            human_score: None,
            predicted: Some(pred.iter().map(|p| ErrorKey::principal(*p)).collect()),
            gold: Some(gold.iter().map(|p| ErrorKey::principal(*p)).collect()),
        }
    }

    #[test]
    fn average_weights_by_count() {
        let items = vec![
            item("1", "DG", &["Basic"], &["Basic"]),
            item("2", "DG", &["Basic"], &["Basic"]),
            item("3", "SG", &["Basic"], &["Basic"]),
            item("4", "SG", &[], &["Basic"]),
        ];
        let r = summarize_items(&items, Level::Principal, vec![]);
        assert_eq!(r.per_task[0].task, "DG");
        assert_eq!(r.per_task[0].ec, Some(1.0));
        assert_eq!(r.per_task[1].ec, Some(0.5));
        assert_eq!(r.average.ec, Some(0.75));
        assert_eq!(r.average.ec_prime.get("Basic"), Some(&0.75));
        assert!(r.average.tau.is_none());
        assert!(r.notes.iter().any(|n| n.contains("no human scores")));
    }

    #[test]
    fn report_without_gold_has_correlations_only() {
        let mut items: Vec<MetricItem> = (0..4)
            .map(|i| MetricItem {
                example_id: i.to_string(),
                task: "TP".into(),
                predicted_score: -(i as f64),
                human_score: Some(5.0 - i as f64),
                predicted: None,
                gold: None,
            })
            .collect();
        items[0].predicted = Some(ErrorSet::new());
        let r = summarize_items(&items, Level::Sub, vec![]);
        assert_eq!(r.average.tau, Some(1.0));
        assert!(r.average.ec.is_none() && r.average.vr.is_none());
        let table = r.to_table(&default_taxonomy());
        assert!(table.contains("tau (%)"));
        assert!(table.lines().any(|l| l.starts_with("EC (%)") && l.trim_end().ends_with('-')));
    }

    fn tied_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec((-3i32..3).prop_map(f64::from), len)
    }

    fn tied_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..40).prop_flat_map(|n| (tied_vec(n), tied_vec(n)))
    }

    proptest! {
        #[test]
        fn tau_matches_brute_force((x, y) in tied_pair()) {
            let fast = kendall_tau_b(&x, &y);
            let slow = kendall_tau_b_naive(&x, &y);
            match (fast, slow) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn tau_invariant_under_increasing_transform((x, y) in tied_pair()) {
            let tx: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            let ty: Vec<f64> = y.iter().map(|v| (v * 0.5).exp()).collect();
            match (kendall_tau_b(&x, &y), kendall_tau_b(&tx, &ty)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn pearson_invariant_under_affine(
            (x, y) in tied_pair(), a in 0.1f64..10.0, b in -10.0f64..10.0
        ) {
            let tx: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            match (pearson(&x, &y), pearson(&tx, &y)) {
                (Ok(r1), Ok(r2)) => prop_assert!((r1 - r2).abs() < 1e-9),
                (r1, r2) => prop_assert_eq!(r1, r2),
            }
        }

        #[test]
        fn correlations_bounded((x, y) in tied_pair()) {
            if let Ok(t) = kendall_tau_b(&x, &y) { prop_assert!((-1.0..=1.0).contains(&t)); }
            if let Ok(r) = pearson(&x, &y) { prop_assert!((-1.0..=1.0).contains(&r)); }
        }

        #[test]
        fn set_metric_monotonicity(
            pairs in proptest::collection::vec(
                (proptest::collection::btree_set(0u8..6, 0..4), proptest::collection::btree_set(0u8..6, 0..4)),
                1..12,
            ),
            extra in proptest::collection::btree_set(0u8..6, 0..4),
            spurious in 6u8..10,
            which in 0usize..12,
        ) {
            let ec = error_coverage(&pairs).unwrap();
            let vr = veridicality_rate(&pairs).unwrap();
            prop_assert!((0.0..=1.0).contains(&ec) && (0.0..=1.0).contains(&vr));

            let mut more = pairs.clone();
            more.push((extra.clone(), extra));
            prop_assert!(error_coverage(&more).unwrap() >= ec);

            let mut noisy = pairs.clone();
            let i = which % noisy.len();
            noisy[i].0.insert(spurious);
            prop_assert!(veridicality_rate(&noisy).unwrap() <= vr);
        }
    }
}
