use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Dataset;
use crate::parser::render_report_text;
use crate::prompt::{render_stage1, render_stage2_unchecked, PromptError, PromptOptions, PromptText, Stage, StageTemplates};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: impl Into<String>) -> Self {
        Self { role: role.into(), content: content.into() }
    }
}

/// One supervised example in chat format. The last message is the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub messages: Vec<ChatMessage>,
    pub stage: Stage,
    pub example_id: String,
}

impl SftRecord {
    pub fn target(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Error)]
pub enum SftError {
    #[error("example {0:?} has no gold annotation")]
    MissingGold(String),
    #[error("example {id:?}: {source}")]
    Prompt {
        id: String,
        #[source]
        source: PromptError,
    },
    #[error("cannot write SFT file: {0}")]
    Io(#[from] io::Error),
}

fn record(prompt: PromptText, target: String, stage: Stage, id: &str) -> SftRecord {
    let mut messages = Vec::with_capacity(3);
    if !prompt.system.is_empty() {
        messages.push(ChatMessage::new("system", prompt.system));
    }
    messages.push(ChatMessage::new("user", prompt.user));
    messages.push(ChatMessage::new("assistant", target));
    SftRecord { messages, stage, example_id: id.to_string() }
}

/// Builds one stage-1 and one stage-2 record per example and shuffles the
/// two stages together with `seed`.
pub fn export_sft(
    dataset: &Dataset,
    taxonomy: &Taxonomy,
    templates: &StageTemplates,
    options: &PromptOptions,
    seed: u64,
) -> Result<Vec<SftRecord>, SftError> {
    let mut records = Vec::with_capacity(dataset.len() * 2);
    for example in &dataset.examples {
        let gold = example.gold.as_ref().ok_or_else(|| SftError::MissingGold(example.id.clone()))?;
        let wrap = |source| SftError::Prompt { id: example.id.clone(), source };
        let p1 = render_stage1(&templates.stage1, taxonomy, example, options).map_err(wrap)?;
        records.push(record(p1, gold.categories.to_canonical_string(taxonomy), Stage::One, &example.id));
        let p2 = render_stage2_unchecked(&templates.stage2, taxonomy, example, &gold.categories, options)
            .map_err(wrap)?;
        records.push(record(p2, render_report_text(&gold.report), Stage::Two, &example.id));
    }
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(records)
}

pub fn sft_to_jsonl(records: &[SftRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_sft(records: &[SftRecord], path: impl AsRef<Path>) -> Result<(), SftError> {
    std::fs::write(path, sft_to_jsonl(records))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{DiagnosticReport, Example, Finding, GoldAnnotation, Location};
    use crate::taxonomy::{default_taxonomy, BASIC};

    fn dataset(n: usize) -> Dataset {
        let examples = (0..n)
            .map(|i| {
                let mut e = Example::new(format!("ex{i:02}"), "SG", "Summarize.", "A a short summary.");
                let report = if i % 3 == 0 {
                    DiagnosticReport::default()
                } else {
                    DiagnosticReport::from_findings(vec![Finding {
                        category: BASIC.into(),
                        sub_type: "fluency".into(),
                        location: Location::quote("A a"),
                        explanation: "repeated article".into(),
                        severity: -(i as i32 % 5) - 1,
                    }])
                };
                e.gold = Some(GoldAnnotation::from_report(report));
                e
            })
            .collect();
        Dataset::new("default-1", examples)
    }

    fn export(ds: &Dataset, seed: u64) -> Vec<SftRecord> {
        export_sft(ds, &default_taxonomy(), &StageTemplates::default(), &PromptOptions::default(), seed).unwrap()
    }

    #[test]
    fn two_records_per_example() {
        let records = export(&dataset(10), 7);
        assert_eq!(records.len(), 20);
        for id in (0..10).map(|i| format!("ex{i:02}")) {
            let stages: Vec<_> = records.iter().filter(|r| r.example_id == id).map(|r| r.stage).collect();
            assert_eq!(stages.len(), 2);
            assert!(stages.contains(&Stage::One) && stages.contains(&Stage::Two));
        }
    }

    #[test]
    fn targets() {
        let records = export(&dataset(3), 1);
        let get = |id: &str, s| records.iter().find(|r| r.example_id == id && r.stage == s).unwrap();
        assert_eq!(get("ex00", Stage::One).target(), "none");
        assert_eq!(get("ex00", Stage::Two).target(), "No errors found.\nScore: 0");
        assert_eq!(get("ex01", Stage::One).target(), "Basic");
        assert!(get("ex01", Stage::Two).target().ends_with("Score: -2"));
        assert_eq!(get("ex01", Stage::One).messages.last().unwrap().role, "assistant");
    }

    #[test]
    fn seed_controls_order_only() {
        let ds = dataset(12);
        let a = sft_to_jsonl(&export(&ds, 3));
        assert_eq!(a, sft_to_jsonl(&export(&ds, 3)));
        let b = export(&ds, 4);
        assert_ne!(a, sft_to_jsonl(&b));
        let mut ta: Vec<_> = export(&ds, 3).iter().map(|r| r.target().to_string()).collect();
        let mut tb: Vec<_> = b.iter().map(|r| r.target().to_string()).collect();
        ta.sort();
        tb.sort();
        assert_eq!(ta, tb);
    }

    #[test]
    fn missing_gold_names_example() {
        let mut ds = dataset(4);
        ds.examples[2].gold = None;
        let err = export_sft(&ds, &default_taxonomy(), &StageTemplates::default(), &PromptOptions::default(), 0)
            .unwrap_err();
        assert!(err.to_string().contains("ex02"), "{err}");
    }
}
