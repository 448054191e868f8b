//! Parsing of raw model text from both stages.
//!
//! Stage 1 answers with a comma-separated list of principal categories or the
//! word `none`. Stage 2 answers in a line-oriented report grammar:
//!
//! ```text
//! Error 1: category=Basic; type=coherence; location="the quoted excerpt"; severity=-2; explanation=why
//! Score: -2
//! ```
//!
//! A report with no findings is written `No errors found.` followed by
//! `Score: 0`. Inside the quoted location, `\"`, `\\` and `\n` are escapes;
//! the explanation uses the same escapes for backslash and newline. The report
//! score is always the severity sum; a declared `Score:` line that disagrees
//! only produces a diagnostic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{
    locate_quote, severity_sum, CategorySet, DiagnosticReport, Finding, Location, MAX_SEVERITY,
    MIN_SEVERITY,
};
use crate::taxonomy::{normalize_key, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// 1-based line in the model text; 0 when not tied to a line.
    pub line: usize,
    pub rule: String,
    pub message: String,
    pub recovered: bool,
}

impl Diagnostic {
    fn recovered(line: usize, rule: &str, message: impl Into<String>) -> Self {
        Self { line, rule: rule.into(), message: message.into(), recovered: true }
    }

    fn dropped(line: usize, rule: &str, message: impl Into<String>) -> Self {
        Self { recovered: false, ..Self::recovered(line, rule, message) }
    }
}

pub type ParseDiagnostics = Vec<Diagnostic>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty model response")]
    Empty,
    #[error("unknown category {token:?} at line {line}")]
    UnknownCategory { line: usize, token: String },
    #[error("unintelligible report: no finding lines and no score line")]
    Unintelligible,
    #[error("invalid finding at line {line}: {message}")]
    InvalidFinding { line: usize, message: String },
}

fn clean_token(token: &str) -> &str {
    token.trim().trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '.' | '"' | '\'' | '`' | '[' | ']' | '(' | ')' | '*' | '-' | '•')
    })
}

/// Parses a stage-1 answer into the set of flagged principal categories.
///
/// Lenient mode never fails: unknown tokens and empty input are recorded as
/// diagnostics.
pub fn parse_stage1(
    text: &str,
    taxonomy: &Taxonomy,
    mode: ParseMode,
) -> Result<(CategorySet, ParseDiagnostics), ParseError> {
    let mut diags = Vec::new();
    let mut set = CategorySet::new();
    if text.trim().is_empty() {
        return match mode {
            ParseMode::Strict => Err(ParseError::Empty),
            ParseMode::Lenient => {
                diags.push(Diagnostic::recovered(0, "empty", "empty answer read as none"));
                Ok((set, diags))
            }
        };
    }
    let mut saw_none = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut body = line.trim();
        // tolerate a leading label such as "Categories:"
        if let Some((head, tail)) = body.split_once(':') {
            if taxonomy.resolve_principal(head).is_err() && !head.contains(',') {
                body = tail;
            }
        }
        for raw in body.split([',', ';', '|']) {
            let token = clean_token(raw);
            if token.is_empty() {
                continue;
            }
            if matches!(normalize_key(token).as_str(), "none" | "noerrors" | "noerror") {
                saw_none = true;
                continue;
            }
            match taxonomy.resolve_principal(token) {
                Ok(p) => {
                    set.insert(p.name.clone());
                }
                Err(_) => match mode {
                    ParseMode::Strict => {
                        return Err(ParseError::UnknownCategory { line: line_no, token: token.to_string() })
                    }
                    ParseMode::Lenient => diags.push(Diagnostic::dropped(
                        line_no,
                        "unknown-category",
                        format!("dropped unknown category {token:?}"),
                    )),
                },
            }
        }
    }
    if saw_none && !set.is_empty() {
        diags.push(Diagnostic::recovered(0, "none-with-categories", "\"none\" ignored next to named categories"));
    }
    Ok((set, diags))
}

/// Field scanner for one finding line, after the `Error k:` prefix.
struct Fields {
    category: Option<String>,
    sub_type: Option<String>,
    quote: Option<String>,
    severity: Option<String>,
    explanation: Option<String>,
}

fn canonical_key(raw: &str) -> Option<&'static str> {
    match normalize_key(raw).as_str() {
        "category" | "principal" | "errorcategory" => Some("category"),
        "type" | "subtype" | "errortype" => Some("type"),
        "location" | "loc" | "quote" => Some("location"),
        "severity" => Some("severity"),
        "explanation" | "reason" => Some("explanation"),
        _ => None,
    }
}

/// Byte offset of the next `; key=` boundary at or after `from`, if any.
fn next_field_boundary(s: &str, from: usize) -> Option<usize> {
    let mut search = from;
    while let Some(rel) = s[search..].find(';') {
        let at = search + rel;
        let rest = s[at + 1..].trim_start();
        if let Some((key, _)) = rest.split_once('=') {
            if canonical_key(key).is_some() {
                return Some(at);
            }
        }
        search = at + 1;
    }
    None
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('"') => out.push('"'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn escape(s: &str, quote: bool) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '"' if quote => out.push_str("\\\""),
            c => out.push(c),
        }
    }
    out
}

/// Reads a quoted value starting at `s[0] == '"'`; returns (value, bytes consumed).
fn read_quoted(s: &str) -> Option<(String, usize)> {
    let mut escaped = false;
    for (i, c) in s.char_indices().skip(1) {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == '"' {
            // a closing quote must end the field
            let after = s[i + 1..].trim_start();
            if after.is_empty() || after.starts_with(';') {
                return Some((unescape(&s[1..i]), i + 1));
            }
        }
    }
    None
}

fn scan_fields(body: &str) -> Fields {
    let mut f = Fields { category: None, sub_type: None, quote: None, severity: None, explanation: None };
    let mut pos = 0;
    while pos < body.len() {
        let rest = &body[pos..];
        let Some(eq) = rest.find('=') else { break };
        let key = rest[..eq].trim().trim_start_matches(';').trim();
        let value_start = pos + eq + 1;
        let value_region = body[value_start..].trim_start();
        let value_start = body.len() - value_region.len();
        let Some(key) = canonical_key(key) else {
            // skip an unknown field up to the next separator
            match body[value_start..].find(';') {
                Some(rel) => {
                    pos = value_start + rel + 1;
                    continue;
                }
                None => break,
            }
        };
        let (value, end) = if key == "location" && value_region.starts_with('"') {
            match read_quoted(value_region) {
                Some((v, used)) => (v, value_start + used),
                None => {
                    let end = next_field_boundary(body, value_start).unwrap_or(body.len());
                    (unescape(body[value_start..end].trim().trim_matches('"')), end)
                }
            }
        } else {
            let end = next_field_boundary(body, value_start).unwrap_or(body.len());
            let raw = body[value_start..end].trim();
            let v = if key == "explanation" { unescape(raw) } else { raw.trim_matches('"').to_string() };
            (v, end)
        };
        let slot = match key {
            "category" => &mut f.category,
            "type" => &mut f.sub_type,
            "location" => &mut f.quote,
            "severity" => &mut f.severity,
            _ => &mut f.explanation,
        };
        if slot.is_none() {
            *slot = Some(value);
        }
        pos = end;
        // step over the separator
        let rest = &body[pos..];
        let trimmed = rest.trim_start();
        pos = body.len() - trimmed.len();
        if trimmed.starts_with(';') {
            pos += 1;
        }
    }
    f
}

/// `Error 3:` / `error:` / `Error #3 -` prefixes. Returns the remainder.
fn finding_body(line: &str) -> Option<&str> {
    let lower = line.get(..5)?;
    if !lower.eq_ignore_ascii_case("error") {
        return None;
    }
    let rest = &line[5..];
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_digit() || c == '#' || c == ' ');
    let rest = rest.strip_prefix(':').or_else(|| rest.strip_prefix('-'))?;
    Some(rest)
}

fn score_line(line: &str) -> Option<Result<i64, String>> {
    let (head, tail) = line.split_once(':')?;
    if !matches!(normalize_key(head).as_str(), "score" | "totalscore" | "finalscore") {
        return None;
    }
    let value = tail.trim().trim_end_matches('.');
    Some(value.parse::<i64>().map_err(|_| value.to_string()))
}

fn parse_severity(raw: &str) -> Option<i64> {
    let t = raw.trim();
    let end = t
        .char_indices()
        .find(|&(i, c)| !(c.is_ascii_digit() || (i == 0 && (c == '-' || c == '+'))))
        .map_or(t.len(), |(i, _)| i);
    t[..end].parse().ok()
}

fn fail_or_drop(
    mode: ParseMode,
    diags: &mut ParseDiagnostics,
    line: usize,
    rule: &str,
    message: String,
) -> Result<(), ParseError> {
    match mode {
        ParseMode::Strict => Err(ParseError::InvalidFinding { line, message }),
        ParseMode::Lenient => {
            diags.push(Diagnostic::dropped(line, rule, format!("finding dropped: {message}")));
            Ok(())
        }
    }
}

/// Parses a stage-2 report.
///
/// Severities outside [-5,-1] are clamped, with a diagnostic. Location quotes
/// are resolved to character spans in `output_text` when possible. In strict
/// mode a finding whose category or type does not resolve is an error; in
/// lenient mode it is dropped with a diagnostic.
pub fn parse_stage2(
    text: &str,
    taxonomy: &Taxonomy,
    output_text: &str,
    mode: ParseMode,
) -> Result<(DiagnosticReport, ParseDiagnostics), ParseError> {
    let mut diags = Vec::new();
    let mut findings = Vec::new();
    let mut finding_lines = 0usize;
    let mut declared: Option<i64> = None;
    let mut saw_score = false;

    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim().trim_start_matches(['*', '-', '•', ' ']).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(score) = score_line(line) {
            saw_score = true;
            match score {
                Ok(v) => declared = Some(v),
                Err(v) => diags.push(Diagnostic::recovered(line_no, "score", format!("unreadable score {v:?} ignored"))),
            }
            continue;
        }
        let Some(body) = finding_body(line) else {
            if !normalize_key(line).starts_with("noerrors") {
                diags.push(Diagnostic::recovered(line_no, "unrecognized", "line ignored"));
            }
            continue;
        };
        finding_lines += 1;
        let fields = scan_fields(body);

        let sub = match (&fields.category, &fields.sub_type) {
            (Some(c), Some(t)) => taxonomy.resolve_qualified(c, t).map_err(|e| e.to_string()),
            (None, Some(t)) => taxonomy.resolve_sub_error(t).map_err(|e| e.to_string()).inspect(|_| {
                diags.push(Diagnostic::recovered(line_no, "category-inferred", "category inferred from type"));
            }),
            (_, None) => Err("missing type".to_string()),
        };
        let sub = match sub {
            Ok(s) => s,
            Err(message) => {
                fail_or_drop(mode, &mut diags, line_no, "taxonomy", message)?;
                continue;
            }
        };

        let Some(raw_sev) = fields.severity.as_deref().and_then(parse_severity) else {
            fail_or_drop(mode, &mut diags, line_no, "severity", "missing or unreadable severity".into())?;
            continue;
        };
        let severity = raw_sev.clamp(i64::from(MIN_SEVERITY), i64::from(MAX_SEVERITY)) as i32;
        if i64::from(severity) != raw_sev {
            diags.push(Diagnostic::recovered(
                line_no,
                "severity-clamped",
                format!("severity {raw_sev} clamped to {severity}"),
            ));
        }

        let quote = fields.quote.unwrap_or_default();
        let span = locate_quote(output_text, &quote);
        if span.is_none() {
            diags.push(Diagnostic::recovered(line_no, "location", "location quote not found in output"));
        }
        findings.push(Finding {
            category: sub.principal.clone(),
            sub_type: sub.name.clone(),
            location: Location { quote, span },
            explanation: fields.explanation.unwrap_or_default(),
            severity,
        });
    }

    if finding_lines == 0 && !saw_score {
        return Err(if text.trim().is_empty() { ParseError::Empty } else { ParseError::Unintelligible });
    }
    let score = severity_sum(&findings);
    if let Some(d) = declared {
        if d != i64::from(score) {
            diags.push(Diagnostic::recovered(
                0,
                "score-mismatch",
                format!("declared score {d} ≠ computed {score}"),
            ));
        }
    }
    Ok((DiagnosticReport { findings, score }, diags))
}

/// Byte-input entry point; invalid UTF-8 is replaced before parsing.
pub fn parse_stage2_bytes(
    bytes: &[u8],
    taxonomy: &Taxonomy,
    output_text: &str,
    mode: ParseMode,
) -> Result<(DiagnosticReport, ParseDiagnostics), ParseError> {
    parse_stage2(&String::from_utf8_lossy(bytes), taxonomy, output_text, mode)
}

/// Canonical report text; the inverse of [`parse_stage2`] up to spans.
pub fn render_report_text(report: &DiagnosticReport) -> String {
    let mut out = String::new();
    if report.findings.is_empty() {
        out.push_str("No errors found.\n");
    }
    for (i, f) in report.findings.iter().enumerate() {
        out.push_str(&format!(
            "Error {}: category={}; type={}; location=\"{}\"; severity={}; explanation={}\n",
            i + 1,
            f.category,
            f.sub_type,
            escape(&f.location.quote, true),
            f.severity,
            escape(&f.explanation, false),
        ));
    }
    out.push_str(&format!("Score: {}", report.score));
    out
}

/// Canonical JSON: fixed key order, findings in input order.
pub fn serialize_report(report: &DiagnosticReport) -> String {
    serde_json::to_string(report).expect("report serializes")
}

pub fn deserialize_report(json: &str) -> Result<DiagnosticReport, serde_json::Error> {
    serde_json::from_str(json)
}
