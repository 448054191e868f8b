//! Synthetic datasets with matching mock scripts.
//!
//! Used by the `demo` command, tests and benchmarks. Everything is derived
//! from a seed, so the same settings always yield the same files.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{MockEntry, MockScript};
use crate::datamodel::{
    CategorySet, Dataset, DiagnosticReport, Example, Finding, GoldAnnotation, Location, Task,
};
use crate::parser::render_report_text;
use crate::prompt::{estimate_tokens, Stage};
use crate::taxonomy::Taxonomy;

/// Minimum token length of every scripted stage-2 report.
pub const MIN_REPORT_TOKENS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub examples: usize,
    /// Examples whose stage-1 answer is "none".
    pub clean: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self { examples: 50, clean: 20, seed: 7 }
    }
}

pub struct Fixture {
    pub dataset: Dataset,
    pub script: Vec<MockEntry>,
}

impl Fixture {
    pub fn mock_script(&self) -> MockScript {
        MockScript::from_entries(&self.script).expect("fixture entries are unique")
    }

    pub fn script_jsonl(&self) -> String {
        self.script.iter().map(|e| serde_json::to_string(e).expect("entry serializes") + "\n").collect()
    }
}

const SUBJECTS: [&str; 8] = [
    "The payment reminder",
    "Your monthly bill",
    "The travel itinerary",
    "This account summary",
    "The delivery notice",
    "Our savings plan",
    "The weekly digest",
    "A new coupon",
];
const VERBS: [&str; 6] = ["explains", "lists", "describes", "covers", "highlights", "summarizes"];
const OBJECTS: [&str; 8] = [
    "the due date and the amount",
    "three ways to save time",
    "the refund policy in detail",
    "recent purchases by category",
    "the steps to confirm an order",
    "how interest is calculated",
    "which services renew next week",
    "where to find support",
];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{} {} {}.",
        SUBJECTS.choose(rng).unwrap(),
        VERBS.choose(rng).unwrap(),
        OBJECTS.choose(rng).unwrap()
    )
}

fn explanation(sub_type: &str, quote: &str) -> String {
    format!(
        "The passage \"{quote}\" shows {sub_type}; a careful reader would notice the problem immediately and \
         the text should be revised so that the statement is accurate, appropriate and easy to follow for the \
         intended audience of the application"
    )
}

fn finding(taxonomy: &Taxonomy, rng: &mut ChaCha8Rng, quote: &str) -> Finding {
    let sub = taxonomy.sub_errors().choose(rng).expect("taxonomy has sub-errors");
    Finding {
        category: sub.principal.clone(),
        sub_type: sub.name.clone(),
        location: Location::quote(quote),
        explanation: explanation(&sub.name, quote),
        severity: -rng.random_range(1..=5),
    }
}

fn half_steps(x: f64) -> f64 {
    ((x * 2.0).round() / 2.0).clamp(0.0, 5.0)
}

/// Builds a dataset with gold annotations and human scores, and a mock
/// script whose answers mostly agree with gold. A few predictions miss a gold
/// error or add a spurious one, so coverage metrics are not all 1.
pub fn generate(spec: &FixtureSpec, taxonomy: &Taxonomy) -> Fixture {
    assert!(spec.clean <= spec.examples, "clean count exceeds example count");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut clean_flags: Vec<bool> = (0..spec.examples).map(|i| i < spec.clean).collect();
    clean_flags.shuffle(&mut rng);

    let mut examples = Vec::with_capacity(spec.examples);
    let mut script = Vec::new();
    for (i, &clean) in clean_flags.iter().enumerate() {
        let id = format!("ex{:03}", i + 1);
        let task = Task::KNOWN[i % Task::KNOWN.len()];
        let sentences: Vec<String> = (0..rng.random_range(3..=5)).map(|_| sentence(&mut rng)).collect();
        let output = sentences.join(" ");
        let input = format!("Write a short notice for request {}.", i + 1);

        let mut predicted: Vec<Finding> = if clean {
            Vec::new()
        } else {
            let k = rng.random_range(1..=3.min(sentences.len()));
            let mut picks: Vec<usize> = (0..sentences.len()).collect();
            picks.shuffle(&mut rng);
            picks[..k].iter().map(|&s| finding(taxonomy, &mut rng, &sentences[s])).collect()
        };
        let mut gold = predicted.clone();
        match rng.random_range(0..10) {
            // gold error the prediction missed
            0 => gold.push(finding(taxonomy, &mut rng, &sentences[0])),
            // spurious predicted error
            1 if !clean => predicted.push(finding(taxonomy, &mut rng, &sentences[sentences.len() - 1])),
            _ => {}
        }
        let gold = DiagnosticReport::from_findings(gold);
        let predicted = DiagnosticReport::from_findings(predicted);

        let penalty = -gold.score as f64;
        let dims = [0, 1, 2].map(|_| half_steps(5.0 - 0.35 * penalty + rng.random_range(-0.5..=0.5)));
        let mut example = Example::new(id.as_str(), task, input, output);
        example.human_dimension_scores = Some(dims);
        example.human_score = Some(dims.iter().sum::<f64>() / 3.0);
        example.gold = Some(GoldAnnotation::from_report(gold));

        let flagged: CategorySet = predicted.categories();
        let stage1 = flagged.to_canonical_string(taxonomy);
        script.push(MockEntry {
            stage: Stage::One,
            example_id: Some(id.clone()),
            prompt_sha256: None,
            completion_tokens: Some(estimate_tokens(&stage1) as u64),
            response: stage1,
        });
        if !flagged.is_empty() {
            let report = render_report_text(&predicted);
            let tokens = estimate_tokens(&report);
            assert!(tokens >= MIN_REPORT_TOKENS, "fixture report too short: {tokens}");
            script.push(MockEntry {
                stage: Stage::Two,
                example_id: Some(id),
                prompt_sha256: None,
                completion_tokens: Some(tokens as u64),
                response: report,
            });
        }
        examples.push(example);
    }
    Fixture { dataset: Dataset::new(taxonomy.version(), examples), script }
}
