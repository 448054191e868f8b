//! Stage instruction templates and prompt rendering.
//!
//! A template file is plain text. An optional system part comes first and is
//! separated from the user part by a line containing only `---`. The
//! placeholders `{taxonomy}`, `{input}` and `{output}` are required in both
//! stages; stage 2 also requires `{categories}`. Any other `{identifier}` is
//! rejected. Substitution is single-pass, so braces inside the substituted
//! text are never expanded.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datamodel::{CategorySet, Example};
use crate::taxonomy::Taxonomy;

/// Default budget, matching the maximum input length used when fine-tuning
/// the reference evaluator.
pub const DEFAULT_TOKEN_BUDGET: usize = 2048;
/// Characters per token assumed for long alphanumeric runs.
pub const CHARS_PER_TOKEN: usize = 4;
pub const TRUNCATION_MARKER: &str = " …[truncated]";

const SECTION_SEPARATOR: &str = "---";

pub const DEFAULT_STAGE1_TEMPLATE: &str = "\
You are a strict quality reviewer for machine-generated text.
---
Check the system output below against these error categories:
{taxonomy}

User input:
{input}

System output:
{output}

Which of the categories above occur in the system output? Answer only with the \
category names separated by commas, or with the single word none if the output \
has no errors. Do not explain.
";

pub const DEFAULT_STAGE2_TEMPLATE: &str = "\
You are a strict quality reviewer for machine-generated text. You write precise \
diagnostic reports.
---
The system output below was flagged for these error categories: {categories}

Definitions of the categories and their error types:
{taxonomy}

User input:
{input}

System output:
{output}

List every error in the system output, one per line, in exactly this format:
Error <k>: category=<category>; type=<error type>; location=\"<exact excerpt of the output>\"; severity=<integer from -5 to -1>; explanation=<why this is an error>
Use -5 for the most severe errors and -1 for the mildest. After the last error \
write one final line:
Score: <sum of all severities>
If there are no errors, write \"No errors found.\" followed by \"Score: 0\".
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl Serialize for Stage {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.number())
    }
}

impl<'de> Deserialize<'de> for Stage {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            n => Err(serde::de::Error::custom(format!("stage must be 1 or 2, got {n}"))),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("missing placeholder {{{0}}}")]
    MissingPlaceholder(&'static str),
    #[error("unresolved placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("template is for stage {found}, expected stage {expected}")]
    WrongStage { expected: Stage, found: Stage },
    #[error("stage 2 requires non-empty categories")]
    EmptyCategories,
    #[error("prompt exceeds {budget}-token budget ({tokens} tokens)")]
    OverBudget { budget: usize, tokens: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionTemplate {
    stage: Stage,
    system: String,
    user: String,
    hash: String,
}

fn placeholders(text: &str) -> impl Iterator<Item = &str> {
    text.match_indices('{').filter_map(move |(i, _)| {
        let rest = &text[i + 1..];
        let end = rest.find('}')?;
        let name = &rest[..end];
        let is_ident = !name.is_empty()
            && name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
        is_ident.then_some(name)
    })
}

impl InstructionTemplate {
    pub fn parse(stage: Stage, text: &str) -> Result<Self, PromptError> {
        let (system, user) = match text.split_once(&format!("\n{SECTION_SEPARATOR}\n")) {
            Some((s, u)) => (s.trim().to_string(), u.to_string()),
            None => (String::new(), text.to_string()),
        };
        let required: &[&'static str] = match stage {
            Stage::One => &["taxonomy", "input", "output"],
            Stage::Two => &["taxonomy", "input", "output", "categories"],
        };
        let all = format!("{system}\n{user}");
        for name in placeholders(&all) {
            if !required.contains(&name) {
                return Err(PromptError::UnknownPlaceholder(name.to_string()));
            }
        }
        for name in required {
            if !placeholders(&all).any(|p| p == *name) {
                return Err(PromptError::MissingPlaceholder(name));
            }
        }
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(Self { stage, system, user, hash })
    }

    pub fn default_stage1() -> Self {
        Self::parse(Stage::One, DEFAULT_STAGE1_TEMPLATE).expect("default stage-1 template is valid")
    }

    pub fn default_stage2() -> Self {
        Self::parse(Stage::Two, DEFAULT_STAGE2_TEMPLATE).expect("default stage-2 template is valid")
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// SHA-256 of the template source, hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }
}

/// The pair of templates driving an evaluation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageTemplates {
    pub stage1: InstructionTemplate,
    pub stage2: InstructionTemplate,
}

impl Default for StageTemplates {
    fn default() -> Self {
        Self {
            stage1: InstructionTemplate::default_stage1(),
            stage2: InstructionTemplate::default_stage2(),
        }
    }
}

impl StageTemplates {
    pub fn hashes(&self) -> TemplateHashes {
        TemplateHashes {
            stage1: self.stage1.hash().to_string(),
            stage2: self.stage2.hash().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateHashes {
    pub stage1: String,
    pub stage2: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub system: String,
    pub user: String,
    pub token_estimate: usize,
}

impl PromptText {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        let system = system.into();
        let user = user.into();
        let token_estimate = (estimate_tokens(&system) + estimate_tokens(&user)).max(1);
        Self { system, user, token_estimate }
    }

    /// Hex SHA-256 of `system + "\n\n" + user`; the key used by mock scripts.
    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        h.update(b"\n\n");
        h.update(self.user.as_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub token_budget: usize,
    /// Cut the tail of the evaluated output when the prompt is over budget.
    /// When false, an over-budget prompt is an error.
    pub truncate_output: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self { token_budget: DEFAULT_TOKEN_BUDGET, truncate_output: true }
    }
}

/// Heuristic token count. Every run of ASCII letters and digits counts as
/// `ceil(len / 4)` tokens; every other non-whitespace character counts as one
/// token; whitespace is free. Appending text never lowers the count.
pub fn estimate_tokens(text: &str) -> usize {
    let mut tokens = 0;
    let mut run: usize = 0;
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            run += 1;
            continue;
        }
        tokens += run.div_ceil(CHARS_PER_TOKEN);
        run = 0;
        if !c.is_whitespace() {
            tokens += 1;
        }
    }
    tokens + run.div_ceil(CHARS_PER_TOKEN)
}

fn substitute(text: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let after = &rest[i + 1..];
        let hit = after.find('}').and_then(|end| {
            let name = &after[..end];
            values.iter().find(|(k, _)| *k == name).map(|(_, v)| (end, *v))
        });
        match hit {
            Some((end, value)) => {
                out.push_str(value);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn principal_block(taxonomy: &Taxonomy) -> String {
    taxonomy
        .principals()
        .iter()
        .map(|p| format!("- {}: {}", p.name, p.definition))
        .collect::<Vec<_>>()
        .join("\n")
}

fn focused_block(taxonomy: &Taxonomy, categories: &CategorySet) -> String {
    let mut lines = Vec::new();
    for p in taxonomy.principals().iter().filter(|p| categories.contains(&p.name)) {
        lines.push(format!("- {}: {}", p.name, p.definition));
        for s in taxonomy.sub_errors_of(&p.name) {
            lines.push(format!("  - {}: {}", s.name, s.definition));
        }
    }
    lines.join("\n")
}

fn char_prefix(text: &str, chars: usize) -> &str {
    match text.char_indices().nth(chars) {
        Some((b, _)) => &text[..b],
        None => text,
    }
}

/// Renders with the output shortened as needed to fit the budget. Only the
/// evaluated output is ever cut; the instructions stay intact.
fn render_within_budget(
    template: &InstructionTemplate,
    base: &[(&str, &str)],
    output: &str,
    options: &PromptOptions,
) -> Result<PromptText, PromptError> {
    let build = |out: &str| {
        let mut values = base.to_vec();
        values.push(("output", out));
        PromptText::new(substitute(&template.system, &values), substitute(&template.user, &values))
    };
    let full = build(output);
    if full.token_estimate <= options.token_budget {
        return Ok(full);
    }
    let over = PromptError::OverBudget { budget: options.token_budget, tokens: full.token_estimate };
    if !options.truncate_output {
        return Err(over);
    }
    let cut = |n: usize| build(&format!("{}{TRUNCATION_MARKER}", char_prefix(output, n)));
    if cut(0).token_estimate > options.token_budget {
        return Err(over);
    }
    // token count is monotone in the prefix length
    let (mut lo, mut hi) = (0usize, output.chars().count());
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if cut(mid).token_estimate <= options.token_budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(cut(lo))
}

fn check_stage(template: &InstructionTemplate, expected: Stage) -> Result<(), PromptError> {
    if template.stage != expected {
        return Err(PromptError::WrongStage { expected, found: template.stage });
    }
    Ok(())
}

pub fn render_stage1(
    template: &InstructionTemplate,
    taxonomy: &Taxonomy,
    example: &Example,
    options: &PromptOptions,
) -> Result<PromptText, PromptError> {
    check_stage(template, Stage::One)?;
    let block = principal_block(taxonomy);
    let base = [("taxonomy", block.as_str()), ("input", example.input.as_str())];
    render_within_budget(template, &base, &example.output, options)
}

pub fn render_stage2(
    template: &InstructionTemplate,
    taxonomy: &Taxonomy,
    example: &Example,
    categories: &CategorySet,
    options: &PromptOptions,
) -> Result<PromptText, PromptError> {
    if categories.is_empty() {
        return Err(PromptError::EmptyCategories);
    }
    render_stage2_unchecked(template, taxonomy, example, categories, options)
}

/// Stage-2 rendering that also accepts an empty category set. Training data
/// needs stage-2 prompts for clean examples; inference never does.
pub(crate) fn render_stage2_unchecked(
    template: &InstructionTemplate,
    taxonomy: &Taxonomy,
    example: &Example,
    categories: &CategorySet,
    options: &PromptOptions,
) -> Result<PromptText, PromptError> {
    check_stage(template, Stage::Two)?;
    let block = focused_block(taxonomy, categories);
    let listed = categories.to_canonical_string(taxonomy);
    let base = [
        ("taxonomy", block.as_str()),
        ("categories", listed.as_str()),
        ("input", example.input.as_str()),
    ];
    render_within_budget(template, &base, &example.output, options)
}
