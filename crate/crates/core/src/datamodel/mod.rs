//! Dataset schema, JSONL ingestion and validation.
//!
//! One [`Example`] per line. Gold annotations carry both a declared score and
//! the findings it must equal the severity sum of; the two are cross-checked
//! on load.

mod sft;
mod split;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::Taxonomy;

pub use sft::{export_sft, sft_to_jsonl, write_sft, ChatMessage, SftError, SftRecord};
pub use split::{sample_split, SplitError};

pub const MIN_SEVERITY: i32 = -5;
pub const MAX_SEVERITY: i32 = -1;
pub const MAX_HUMAN_SCORE: f64 = 5.0;

/// Task identifier. The four built-in tasks are listed in [`Task::KNOWN`];
/// any other non-empty identifier is accepted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Task(pub String);

impl Task {
    /// Social media post generation, dialogue generation, text paraphrase,
    /// story generation.
    pub const KNOWN: [&'static str; 4] = ["SMPG", "DG", "TP", "SG"];

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Sort key placing the built-in tasks first, in their conventional order.
    pub fn display_rank(&self) -> (usize, &str) {
        let pos = Self::KNOWN
            .iter()
            .position(|k| k.eq_ignore_ascii_case(&self.0))
            .unwrap_or(Self::KNOWN.len());
        (pos, &self.0)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Task {
    fn from(s: &str) -> Self {
        Task(s.to_string())
    }
}

/// Set of principal category names (canonical spelling).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategorySet(pub BTreeSet<String>);

impl CategorySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains(name)
    }

    pub fn insert(&mut self, name: impl Into<String>) -> bool {
        self.0.insert(name.into())
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.0.iter()
    }

    /// Members in taxonomy order; unknown names sort last alphabetically.
    pub fn in_taxonomy_order<'a>(&'a self, taxonomy: &Taxonomy) -> Vec<&'a str> {
        let mut names: Vec<&str> = self.0.iter().map(String::as_str).collect();
        names.sort_by_key(|n| (taxonomy.principal_rank(n).unwrap_or(usize::MAX), *n));
        names
    }

    /// Canonical text form: comma-separated names in taxonomy order, or `none`.
    pub fn to_canonical_string(&self, taxonomy: &Taxonomy) -> String {
        if self.is_empty() {
            "none".to_string()
        } else {
            self.in_taxonomy_order(taxonomy).join(", ")
        }
    }
}

impl<S: Into<String>> FromIterator<S> for CategorySet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        CategorySet(iter.into_iter().map(Into::into).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    /// Verbatim excerpt of the evaluated output.
    pub quote: String,
    /// Character offsets `[start, end)` of the quote within the output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[usize; 2]>,
}

impl Location {
    pub fn quote(quote: impl Into<String>) -> Self {
        Self { quote: quote.into(), span: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub category: String,
    pub sub_type: String,
    pub location: Location,
    pub explanation: String,
    pub severity: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub findings: Vec<Finding>,
    pub score: i32,
}

impl DiagnosticReport {
    /// Builds a report whose score is the sum of the findings' severities.
    pub fn from_findings(findings: Vec<Finding>) -> Self {
        let score = severity_sum(&findings);
        Self { findings, score }
    }

    pub fn is_consistent(&self) -> bool {
        self.score == severity_sum(&self.findings)
    }

    /// Distinct principal categories of the findings.
    pub fn categories(&self) -> CategorySet {
        self.findings.iter().map(|f| f.category.clone()).collect()
    }
}

pub fn severity_sum(findings: &[Finding]) -> i32 {
    findings.iter().map(|f| f.severity).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub categories: CategorySet,
    pub report: DiagnosticReport,
}

impl GoldAnnotation {
    pub fn from_report(report: DiagnosticReport) -> Self {
        Self { categories: report.categories(), report }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub task: Task,
    pub input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_dimension_scores: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldAnnotation>,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        task: impl Into<Task>,
        input: impl Into<String>,
        output: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            task: task.into(),
            input: input.into(),
            output: output.into(),
            reference: None,
            human_score: None,
            human_dimension_scores: None,
            gold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub taxonomy_version: String,
    pub examples: Vec<Example>,
    /// 1-based source line of each example, parallel to `examples`. Empty for
    /// datasets built in memory.
    pub lines: Vec<usize>,
}

impl Dataset {
    pub fn new(taxonomy_version: impl Into<String>, examples: Vec<Example>) -> Self {
        Self { taxonomy_version: taxonomy_version.into(), examples, lines: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn line_of(&self, index: usize) -> Option<usize> {
        self.lines.get(index).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// Canonical JSONL text, one example per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            out.push_str(&serde_json::to_string(e).expect("example serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationLevel {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub level: ViolationLevel,
    pub field: String,
    pub rule: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

impl Violation {
    fn error(field: impl Into<String>, rule: &str, message: impl Into<String>) -> Self {
        Self {
            level: ViolationLevel::Error,
            field: field.into(),
            rule: rule.to_string(),
            message: message.into(),
            line: None,
        }
    }

    fn warning(field: impl Into<String>, rule: &str, message: impl Into<String>) -> Self {
        Self { level: ViolationLevel::Warning, ..Self::error(field, rule, message) }
    }

    pub fn is_error(&self) -> bool {
        self.level == ViolationLevel::Error
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.level {
            ViolationLevel::Warning => "warning",
            ViolationLevel::Error => "error",
        };
        write!(f, "{level}: {} [{}]: {}", self.field, self.rule, self.message)?;
        if let Some(line) = self.line {
            write!(f, " at line {line}")?;
        }
        Ok(())
    }
}

/// Finds `quote` in `text`, first verbatim, then with all whitespace runs
/// collapsed to a single space. Returns character offsets `[start, end)` in
/// `text`.
pub fn locate_quote(text: &str, quote: &str) -> Option<[usize; 2]> {
    if quote.trim().is_empty() {
        return None;
    }
    if let Some(byte_start) = text.find(quote) {
        let start = text[..byte_start].chars().count();
        return Some([start, start + quote.chars().count()]);
    }

    // normalized text plus the original char index of every normalized char
    let mut norm = Vec::new();
    let mut origin = Vec::new();
    let mut in_space = false;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if !in_space && !norm.is_empty() {
                norm.push(' ');
                origin.push(i);
            }
            in_space = true;
        } else {
            norm.push(c);
            origin.push(i);
            in_space = false;
        }
    }
    let needle: Vec<char> = quote.split_whitespace().collect::<Vec<_>>().join(" ").chars().collect();
    if needle.is_empty() || needle.len() > norm.len() {
        return None;
    }
    let pos = norm.windows(needle.len()).position(|w| w == needle.as_slice())?;
    let start = origin[pos];
    let end = origin[pos + needle.len() - 1] + 1;
    Some([start, end])
}

fn in_unit_range(v: f64) -> bool {
    v.is_finite() && (0.0..=MAX_HUMAN_SCORE).contains(&v)
}

/// Checks every per-example invariant. Violations are data: an empty list
/// means the example is valid; warnings do not make it invalid.
pub fn validate_example(example: &Example, taxonomy: &Taxonomy) -> Vec<Violation> {
    let mut out = Vec::new();
    if example.id.trim().is_empty() {
        out.push(Violation::error("id", "non-empty", "id must be non-empty"));
    }
    if example.task.0.trim().is_empty() {
        out.push(Violation::error("task", "non-empty", "task must be non-empty"));
    }
    if example.input.trim().is_empty() {
        out.push(Violation::error("input", "non-empty", "input must be non-empty"));
    }
    if example.output.trim().is_empty() {
        out.push(Violation::error("output", "non-empty", "output must be non-empty"));
    }
    if let Some(s) = example.human_score {
        if !in_unit_range(s) {
            out.push(Violation::error(
                "human_score",
                "range",
                format!("human score {s} outside [0,5]"),
            ));
        }
    }
    if let Some(dims) = example.human_dimension_scores {
        for (i, s) in dims.iter().enumerate() {
            if !in_unit_range(*s) {
                out.push(Violation::error(
                    format!("human_dimension_scores[{i}]"),
                    "range",
                    format!("dimension score {s} outside [0,5]"),
                ));
            }
        }
    }
    if let Some(gold) = &example.gold {
        validate_gold(gold, &example.output, taxonomy, &mut out);
    }
    out
}

fn validate_gold(gold: &GoldAnnotation, output: &str, taxonomy: &Taxonomy, out: &mut Vec<Violation>) {
    let mut principals = CategorySet::new();
    for (i, f) in gold.report.findings.iter().enumerate() {
        let field = |name: &str| format!("gold.report.findings[{i}].{name}");
        if !(MIN_SEVERITY..=MAX_SEVERITY).contains(&f.severity) {
            out.push(Violation::error(
                field("severity"),
                "severity-range",
                format!("severity {} out of range [-5,-1]", f.severity),
            ));
        }
        match taxonomy.resolve_qualified(&f.category, &f.sub_type) {
            Ok(sub) => {
                principals.insert(sub.principal.clone());
            }
            Err(e) => {
                out.push(Violation::error(field("sub_type"), "taxonomy", e.to_string()));
                if let Ok(p) = taxonomy.resolve_principal(&f.category) {
                    principals.insert(p.name.clone());
                } else {
                    principals.insert(f.category.clone());
                }
            }
        }
        match locate_quote(output, &f.location.quote) {
            None => out.push(Violation::warning(
                field("location"),
                "unresolvable location",
                format!("unresolvable location: quote {:?} not found in output", f.location.quote),
            )),
            Some(found) => {
                if let Some(span) = f.location.span {
                    let n = output.chars().count();
                    if span[0] > span[1] || span[1] > n {
                        out.push(Violation::error(
                            field("location.span"),
                            "span-range",
                            format!("span {span:?} outside output of {n} chars"),
                        ));
                    } else if span != found {
                        out.push(Violation::warning(
                            field("location.span"),
                            "span-mismatch",
                            format!("span {span:?} does not match quote position {found:?}"),
                        ));
                    }
                }
            }
        }
    }
    let sum = severity_sum(&gold.report.findings);
    if gold.report.score != sum {
        out.push(Violation::error(
            "gold.report.score",
            "severity-sum",
            format!("score ≠ severity sum: declared {} but findings sum to {sum}", gold.report.score),
        ));
    }
    let mut declared = CategorySet::new();
    for c in gold.categories.iter() {
        match taxonomy.resolve_principal(c) {
            Ok(p) => {
                declared.insert(p.name.clone());
            }
            Err(e) => out.push(Violation::error("gold.categories", "taxonomy", e.to_string())),
        }
    }
    if declared != principals {
        out.push(Violation::error(
            "gold.categories",
            "categories/report mismatch",
            format!(
                "categories/report mismatch: declared {:?}, findings imply {:?}",
                declared.0, principals.0
            ),
        ));
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("malformed JSON at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("{message} at line {line}")]
    Schema { line: usize, message: String },
    #[error("duplicate id {id:?} at line {line} (first seen at line {first_line})")]
    DuplicateId { id: String, line: usize, first_line: usize },
}

/// Result of scanning a dataset file without stopping at the first problem.
#[derive(Debug, Default)]
pub struct ScanReport {
    pub examples: usize,
    pub violations: Vec<Violation>,
}

impl ScanReport {
    pub fn has_errors(&self) -> bool {
        self.violations.iter().any(Violation::is_error)
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, DatasetError> {
    let io_err = |source| DatasetError::Io { path: path.display().to_string(), source };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    Ok(lines)
}

/// Loads and validates a JSONL dataset, failing on the first error-level
/// violation. Warnings are dropped; use [`scan_dataset`] to see them.
pub fn load_dataset(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Dataset, DatasetError> {
    let mut examples = Vec::new();
    let mut lines = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line, text) in read_lines(path.as_ref())? {
        let example: Example = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Malformed { line, message: e.to_string() })?;
        if let Some(v) = validate_example(&example, taxonomy).into_iter().find(Violation::is_error) {
            return Err(DatasetError::Schema { line, message: v.message });
        }
        if let Some(&first_line) = seen.get(&example.id) {
            return Err(DatasetError::DuplicateId { id: example.id, line, first_line });
        }
        seen.insert(example.id.clone(), line);
        examples.push(example);
        lines.push(line);
    }
    Ok(Dataset { taxonomy_version: taxonomy.version().to_string(), examples, lines })
}

/// Validates every line and collects all violations. Only I/O failures are
/// returned as errors.
pub fn scan_dataset(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<ScanReport, DatasetError> {
    let mut report = ScanReport::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line, text) in read_lines(path.as_ref())? {
        let example: Example = match serde_json::from_str(&text) {
            Ok(e) => e,
            Err(e) => {
                report.violations.push(Violation {
                    line: Some(line),
                    ..Violation::error("<line>", "json", format!("malformed JSON: {e}"))
                });
                continue;
            }
        };
        report.examples += 1;
        for mut v in validate_example(&example, taxonomy) {
            v.line = Some(line);
            report.violations.push(v);
        }
        if let Some(&first) = seen.get(&example.id) {
            report.violations.push(Violation {
                line: Some(line),
                ..Violation::error(
                    "id",
                    "unique",
                    format!("duplicate id {:?} (first seen at line {first})", example.id),
                )
            });
        } else {
            seen.insert(example.id.clone(), line);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{default_taxonomy, BASIC, RELIABILITY};
    use std::io::Write;

    fn finding(cat: &str, sub: &str, quote: &str, severity: i32) -> Finding {
        Finding {
            category: cat.into(),
            sub_type: sub.into(),
            location: Location::quote(quote),
            explanation: "because".into(),
            severity,
        }
    }

    fn annotated(id: &str, findings: Vec<Finding>) -> Example {
        let mut e = Example::new(id, "DG", "hi there", "The cat sat on the the mat.");
        e.human_score = Some(3.5);
        e.gold = Some(GoldAnnotation::from_report(DiagnosticReport::from_findings(findings)));
        e
    }

    fn write_file(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn consistent_example_has_no_violations() {
        let t = default_taxonomy();
        let e = annotated("a", vec![finding(BASIC, "fluency", "the the", -2)]);
        assert_eq!(validate_example(&e, &t), vec![]);
    }

    #[test]
    fn category_mismatch_is_reported() {
        let t = default_taxonomy();
        let mut e = annotated("a", vec![finding(RELIABILITY, "inaccuracy", "cat", -2)]);
        e.gold.as_mut().unwrap().categories = [BASIC].into_iter().collect();
        let v = validate_example(&e, &t);
        assert!(v.iter().any(|v| v.rule == "categories/report mismatch" && v.is_error()));
    }

    #[test]
    fn missing_quote_is_only_a_warning() {
        let t = default_taxonomy();
        let e = annotated("a", vec![finding(BASIC, "fluency", "xyzzy", -1)]);
        let v = validate_example(&e, &t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].level, ViolationLevel::Warning);
        assert_eq!(v[0].rule, "unresolvable location");
    }

    #[test]
    fn locate_quote_matches_substring_oracle() {
        let text = "Héllo  wide\n world, hello";
        // exact: oracle is str::find converted to char offsets
        for quote in ["wide", "hello", "Héllo", "ld, h"] {
            let b = text.find(quote).unwrap();
            let s = text[..b].chars().count();
            assert_eq!(locate_quote(text, quote), Some([s, s + quote.chars().count()]));
        }
        assert_eq!(locate_quote(text, "wide world"), Some([7, 18]));
        assert_eq!(locate_quote(text, "xyzzy"), None);
        assert_eq!(locate_quote(text, "  "), None);
    }

    #[test]
    fn loads_three_lines() {
        let t = default_taxonomy();
        let lines: Vec<String> = ["a", "b", "c"]
            .iter()
            .map(|id| serde_json::to_string(&annotated(id, vec![])).unwrap())
            .collect();
        let f = write_file(&lines);
        let ds = load_dataset(f.path(), &t).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.lines, vec![1, 2, 3]);
        assert_eq!(ds.taxonomy_version, t.version());
    }

    #[test]
    fn severity_out_of_range_names_line() {
        let t = default_taxonomy();
        let ok = serde_json::to_string(&annotated("a", vec![])).unwrap();
        let bad = serde_json::to_string(&annotated("b", vec![finding(BASIC, "fluency", "cat", -6)]))
            .unwrap();
        let f = write_file(&[ok, bad]);
        let err = load_dataset(f.path(), &t).unwrap_err().to_string();
        assert!(err.contains("severity -6 out of range [-5,-1]"), "{err}");
        assert!(err.ends_with("at line 2"), "{err}");
    }

    #[test]
    fn declared_score_must_equal_sum() {
        let t = default_taxonomy();
        let mut e = annotated(
            "a",
            vec![finding(BASIC, "fluency", "the the", -2), finding(BASIC, "coherence", "cat", -1)],
        );
        e.gold.as_mut().unwrap().report.score = -4;
        let f = write_file(&[serde_json::to_string(&e).unwrap()]);
        let err = load_dataset(f.path(), &t).unwrap_err().to_string();
        assert!(err.contains("score ≠ severity sum"), "{err}");
    }

    #[test]
    fn duplicate_ids_and_malformed_lines() {
        let t = default_taxonomy();
        let a = serde_json::to_string(&annotated("a", vec![])).unwrap();
        let f = write_file(&[a.clone(), a.clone()]);
        assert!(matches!(
            load_dataset(f.path(), &t),
            Err(DatasetError::DuplicateId { line: 2, first_line: 1, .. })
        ));
        let f = write_file(&[a, "{not json".into()]);
        assert!(matches!(
            load_dataset(f.path(), &t),
            Err(DatasetError::Malformed { line: 2, .. })
        ));
        let scan = scan_dataset(f.path(), &t).unwrap();
        assert_eq!(scan.examples, 1);
        assert!(scan.has_errors());
    }

    #[test]
    fn jsonl_round_trip() {
        let t = default_taxonomy();
        let mut e = annotated("x", vec![finding(BASIC, "fluency", "the the", -3)]);
        e.reference = Some("ref".into());
        e.human_dimension_scores = Some([1.0, 2.5, 5.0]);
        let ds = Dataset::new(t.version(), vec![e, annotated("y", vec![])]);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(ds.to_jsonl().as_bytes()).unwrap();
        let back = load_dataset(f.path(), &t).unwrap();
        assert_eq!(back.examples, ds.examples);
    }
}
