#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gatecheck_core::datamodel::{Dataset, DiagnosticReport, Example, Finding, GoldAnnotation, Location};
use gatecheck_core::pipeline::{outcomes_to_jsonl, EvaluationOutcome, Mode, OutcomeRecord};
use gatecheck_core::prompt::StageTemplates;
use gatecheck_core::taxonomy::{BASIC, RELIABILITY};

pub const OUTPUT: &str = "The the offer ends today. Prices are lower than ever before.";

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gatecheck")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env_remove("EVAL_BASE_URL").env_remove("GATECHECK_CONFIG").output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn basic(severity: i32) -> Finding {
    Finding {
        category: BASIC.into(),
        sub_type: "fluency".into(),
        location: Location::quote("The the"),
        explanation: "repeated word".into(),
        severity,
    }
}

pub fn reliability(severity: i32) -> Finding {
    Finding {
        category: RELIABILITY.into(),
        sub_type: "inaccuracy".into(),
        location: Location::quote("lower than ever"),
        explanation: "unsupported claim".into(),
        severity,
    }
}

pub struct Golden {
    pub dataset: PathBuf,
    pub outcomes: PathBuf,
}

/// Four DG examples with hand-checkable metrics.
///
/// human     4, 3, 2, 1
/// predicted 0, -2, -1, -3
/// gold sets {}, {B}, {R}, {R, B}
/// pred sets {}, {B, R}, {B}, {R}
pub fn golden(dir: &Path) -> Golden {
    let cases: [(f64, Vec<Finding>, Vec<Finding>); 4] = [
        (4.0, vec![], vec![]),
        (3.0, vec![basic(-2)], vec![basic(-1), reliability(-1)]),
        (2.0, vec![reliability(-4)], vec![basic(-1)]),
        (1.0, vec![reliability(-2), basic(-1)], vec![reliability(-3)]),
    ];
    let hashes = StageTemplates::default().hashes();
    let mut examples = Vec::new();
    let mut records = Vec::new();
    for (i, (human, gold, predicted)) in cases.into_iter().enumerate() {
        let id = format!("g{}", i + 1);
        let mut e = Example::new(&id, "DG", "Write an ad.", OUTPUT);
        e.human_score = Some(human);
        e.gold = Some(GoldAnnotation::from_report(DiagnosticReport::from_findings(gold)));
        examples.push(e);
        let report = DiagnosticReport::from_findings(predicted);
        records.push(OutcomeRecord::Ok(EvaluationOutcome {
            example_id: id,
            mode: Mode::Full,
            categories: report.categories(),
            score: report.findings.iter().map(|f| f.severity).sum(),
            report: Some(report),
            stage1_latency_ms: 7.0,
            stage2_latency_ms: Some(100.0),
            template_hashes: hashes.clone(),
            diagnostics: Vec::new(),
        }));
    }
    let dataset = dir.join("golden.jsonl");
    let outcomes = dir.join("golden.outcomes.jsonl");
    std::fs::write(&dataset, Dataset::new("default-1", examples).to_jsonl()).unwrap();
    std::fs::write(&outcomes, outcomes_to_jsonl(&records, None)).unwrap();
    Golden { dataset, outcomes }
}

pub struct Demo {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub dataset: PathBuf,
}

pub fn demo(dir: &Path) -> Demo {
    let o = run(&["demo", "--out-dir", p(dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    Demo { dir: dir.to_path_buf(), config: dir.join("gatecheck.toml"), dataset: dir.join("dataset.jsonl") }
}
