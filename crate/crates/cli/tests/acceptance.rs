//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gatecheck_client::{Client, HttpMethod};
use gatecheck_core::annotation::{FindingVerdict, Verdict};
use gatecheck_core::api::{AnnotationSubmission, EvaluateRequest};
use gatecheck_core::backend::{MockBackend, MockLatency, MockScript};
use gatecheck_core::bench::run_bench;
use gatecheck_core::datamodel::{export_sft, Dataset, DiagnosticReport, Example, Finding, Location};
use gatecheck_core::fixture::{generate, Fixture, FixtureSpec};
use gatecheck_core::metrics::{
    error_coverage, kendall_tau_b, pearson, per_category_coverage, veridicality_rate, ErrorKey, ErrorSet,
    MetricError,
};
use gatecheck_core::parser::{parse_stage1, parse_stage2_bytes, render_report_text, ParseMode};
use gatecheck_core::pipeline::{aggregate_score, run_batch, Evaluator, EvaluatorConfig, Mode};
use gatecheck_core::prompt::{PromptOptions, Stage, StageTemplates};
use gatecheck_core::taxonomy::{default_taxonomy, Taxonomy};
use gatecheck_service::{serve, AnnotationStore, AppState, ServiceConfig, Session};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TAU_TOLERANCE: f64 = 1e-12;
const TAU_TIME_LIMIT: Duration = Duration::from_secs(5);
const PEARSON_TOLERANCE: f64 = 1e-12;
const PEARSON_TIME_LIMIT: Duration = Duration::from_secs(1);
const SPEEDUP_MAX_RATIO: f64 = 0.15;
const CLOSED_FORM_TOLERANCE: f64 = 1e-9;
const MS_PER_TOKEN: f64 = 2.0;
const MAX_STAGE1_TOKENS: u64 = 10;
const MIN_STAGE2_TOKENS: u64 = 100;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture() -> (Fixture, Taxonomy) {
    let taxonomy = default_taxonomy();
    (generate(&FixtureSpec::default(), &taxonomy), taxonomy)
}

fn evaluator(mock: Arc<MockBackend>, taxonomy: &Taxonomy) -> Evaluator {
    Evaluator::new(mock, Arc::new(taxonomy.clone()), Arc::new(StageTemplates::default()), EvaluatorConfig::default())
}

// ---- correlation oracles -------------------------------------------------

fn brute_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tied_x += 1;
            }
            if dy == 0.0 {
                tied_y += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - tied_x) as f64) * ((n0 - tied_y) as f64);
    (denom > 0.0).then(|| (concordant - discordant) as f64 / denom.sqrt())
}

fn tau_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut max_diff: f64 = 0.0;
    let mut undefined = 0;
    for case in 0..200 {
        let n = rng.random_range(2..=50);
        let levels = rng.random_range(2..=5);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        match (brute_tau_b(&x, &y), kendall_tau_b(&x, &y)) {
            (Some(expected), Ok(got)) => max_diff = max_diff.max((expected - got).abs()),
            (None, Err(MetricError::AllTied)) => undefined += 1,
            (e, g) => return Err(format!("case {case}: oracle {e:?}, library {g:?}")),
        }
    }
    let elapsed = start.elapsed();
    ensure(max_diff <= TAU_TOLERANCE, || format!("max |diff| {max_diff:e} > {TAU_TOLERANCE:e}"))?;
    ensure(elapsed < TAU_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!("200 pairs ({undefined} all-tied), max |diff| {max_diff:.1e}, {:.3} s", elapsed.as_secs_f64()))
}

fn direct_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

fn pearson_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let start = Instant::now();
    let mut max_diff: f64 = 0.0;
    for case in 0..200 {
        let n = rng.random_range(3..=50);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let got = pearson(&x, &y).map_err(|e| format!("case {case}: {e}"))?;
        max_diff = max_diff.max((got - direct_pearson(&x, &y)).abs());
    }
    let constant = vec![3.0; 10];
    let varying: Vec<f64> = (0..10).map(f64::from).collect();
    let zero_var = [pearson(&constant, &varying), pearson(&varying, &constant)];
    let elapsed = start.elapsed();
    ensure(zero_var.iter().all(|r| matches!(r, Err(MetricError::ZeroVariance))), || {
        format!("zero variance gave {zero_var:?}")
    })?;
    ensure(max_diff <= PEARSON_TOLERANCE, || format!("max |diff| {max_diff:e} > {PEARSON_TOLERANCE:e}"))?;
    ensure(elapsed < PEARSON_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "200 pairs, max |diff| {max_diff:.1e}, zero variance -> ZeroVariance, {:.3} s",
        elapsed.as_secs_f64()
    ))
}

// ---- coverage oracle -----------------------------------------------------

fn universe(taxonomy: &Taxonomy) -> Vec<ErrorKey> {
    taxonomy
        .principals()
        .iter()
        .flat_map(|p| taxonomy.sub_errors_of(&p.name).take(2).map(|s| ErrorKey::sub(&p.name, &s.name)))
        .collect()
}

fn random_set(rng: &mut ChaCha8Rng, keys: &[ErrorKey]) -> ErrorSet {
    if rng.random_bool(0.3) {
        return ErrorSet::new();
    }
    keys.iter().filter(|_| rng.random_bool(0.35)).cloned().collect()
}

fn contained(inner: &ErrorSet, outer: &ErrorSet) -> bool {
    inner.iter().all(|k| outer.iter().any(|o| o == k))
}

fn coverage_oracle() -> Check {
    let taxonomy = default_taxonomy();
    let keys = universe(&taxonomy);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut compared = 0;
    for case in 0..100 {
        let len = rng.random_range(1..=30);
        let pairs: Vec<(ErrorSet, ErrorSet)> =
            (0..len).map(|_| (random_set(&mut rng, &keys), random_set(&mut rng, &keys))).collect();
        let ec = pairs.iter().filter(|(p, g)| contained(g, p)).count() as f64 / len as f64;
        let vr = pairs.iter().filter(|(p, g)| contained(p, g)).count() as f64 / len as f64;
        let got_ec = error_coverage(&pairs).map_err(|e| e.to_string())?;
        let got_vr = veridicality_rate(&pairs).map_err(|e| e.to_string())?;
        ensure(got_ec == ec && got_vr == vr, || format!("case {case}: EC {got_ec} vs {ec}, VR {got_vr} vs {vr}"))?;
        ensure((0.0..=1.0).contains(&got_ec) && (0.0..=1.0).contains(&got_vr), || format!("case {case}: out of range"))?;

        let mut expected = Vec::new();
        for principal in taxonomy.principals() {
            let (mut hit, mut total) = (0usize, 0usize);
            for (p, g) in &pairs {
                for k in g.iter().filter(|k| k.principal == principal.name) {
                    total += 1;
                    if p.contains(k) {
                        hit += 1;
                    }
                }
            }
            if total > 0 {
                expected.push((principal.name.clone(), hit as f64 / total as f64));
            }
        }
        match per_category_coverage(&pairs, &taxonomy) {
            Ok(got) => ensure(got == expected, || format!("case {case}: EC' {got:?} vs {expected:?}"))?,
            Err(MetricError::NoGoldErrors) => ensure(expected.is_empty(), || format!("case {case}: EC' missing"))?,
            Err(e) => return Err(format!("case {case}: {e}")),
        }
        compared += 1;
    }

    let k = keys[0].clone();
    let one: ErrorSet = [k].into_iter().collect();
    let empty = ErrorSet::new();
    let edge = |p: &ErrorSet, g: &ErrorSet| {
        let pairs = vec![(p.clone(), g.clone())];
        (error_coverage(&pairs).unwrap(), veridicality_rate(&pairs).unwrap())
    };
    ensure(edge(&empty, &empty) == (1.0, 1.0), || "empty/empty".into())?;
    ensure(edge(&empty, &one) == (0.0, 1.0), || "empty prediction must be veridical".into())?;
    ensure(edge(&one, &empty) == (1.0, 0.0), || "empty gold must be covered".into())?;
    Ok(format!("{compared} collections exact, empty-set edge cases hold"))
}

// ---- severity sum --------------------------------------------------------

const SENTENCES: [&str; 4] = [
    "The offer ends today.",
    "Prices are lower than ever before.",
    "Call us for a free quote.",
    "Our team answers within an hour.",
];

fn severity_sum() -> Check {
    let taxonomy = default_taxonomy();
    let subs: Vec<(String, String)> =
        taxonomy.sub_errors().iter().map(|s| (s.principal.clone(), s.name.clone())).collect();
    let output = SENTENCES.join(" ");
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut script = MockScript::new();
    let mut examples = Vec::new();
    let mut expected = Vec::new();
    for i in 0..1000 {
        let n = rng.random_range(0..=6);
        let findings: Vec<Finding> = (0..n)
            .map(|_| {
                let (category, sub_type) = subs.choose(&mut rng).unwrap().clone();
                Finding {
                    category,
                    sub_type,
                    location: Location::quote(*SENTENCES.choose(&mut rng).unwrap()),
                    explanation: "noted".into(),
                    severity: rng.random_range(-5..=-1),
                }
            })
            .collect();
        let sum: i32 = findings.iter().map(|f| f.severity).sum();
        let report = DiagnosticReport::from_findings(findings);
        if aggregate_score(&report) != sum {
            return Err(format!("report {i}: aggregate {} vs {sum}", aggregate_score(&report)));
        }
        let id = format!("r{i:04}");
        script = script.with(Stage::One, &id, &report.categories().to_canonical_string(&taxonomy), Some(3));
        if !report.findings.is_empty() {
            script = script.with(Stage::Two, &id, &render_report_text(&report), Some(120));
        }
        examples.push(Example::new(&id, "DG", "Write an ad.", output.as_str()));
        expected.push(sum);
    }
    let mock = Arc::new(MockBackend::new(script, MockLatency::default()));
    let eval = evaluator(mock, &taxonomy);
    let dataset = Dataset::new(taxonomy.version(), examples);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let records = rt.block_on(run_batch(&eval, &dataset, Mode::Full, 8)).map_err(|e| e.to_string())?;
    for (record, sum) in records.iter().zip(&expected) {
        let outcome = record.outcome().ok_or_else(|| format!("{} failed", record.example_id()))?;
        let json = serde_json::to_value(outcome).unwrap();
        ensure(outcome.score == *sum && json["score"] == *sum, || {
            format!("{}: score {} / serialized {} vs {sum}", outcome.example_id, outcome.score, json["score"])
        })?;
    }
    Ok("1000 reports: aggregate and serialized scores equal the severity sum".into())
}

// ---- cascade behaviour ---------------------------------------------------

fn early_exit() -> Check {
    let (fx, taxonomy) = fixture();
    let mock = Arc::new(MockBackend::new(fx.mock_script(), MockLatency::default()));
    let eval = evaluator(mock.clone(), &taxonomy);
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(run_batch(&eval, &fx.dataset, Mode::Full, 8)).map_err(|e| e.to_string())?;
    let (full1, full2) = (mock.calls(Stage::One), mock.calls(Stage::Two));
    mock.reset_counters();
    rt.block_on(run_batch(&eval, &fx.dataset, Mode::Gate, 8)).map_err(|e| e.to_string())?;
    let (gate1, gate2) = (mock.calls(Stage::One), mock.calls(Stage::Two));
    ensure(full1 == 50 && full2 == 30 && gate1 == 50 && gate2 == 0, || {
        format!("full {full1}/{full2}, gate {gate1}/{gate2} (stage 1/stage 2 calls)")
    })?;
    Ok("full: 50 stage-1 / 30 stage-2 calls; gate: 50 / 0".into())
}

fn cascade_speedup() -> Check {
    let (fx, taxonomy) = fixture();
    let latency = MockLatency { per_token_ms: MS_PER_TOKEN, ..MockLatency::default() };
    let n = fx.dataset.len() as f64;
    let mut gate_total = 0.0;
    let mut stage2_total = 0.0;
    for e in &fx.script {
        let tokens = e.completion_tokens.ok_or("fixture entry without token count")?;
        let ms = latency.base_ms + MS_PER_TOKEN * tokens as f64;
        match e.stage {
            Stage::One => {
                ensure(tokens <= MAX_STAGE1_TOKENS, || format!("stage-1 answer of {tokens} tokens"))?;
                gate_total += ms;
            }
            Stage::Two => {
                ensure(tokens >= MIN_STAGE2_TOKENS, || format!("stage-2 report of {tokens} tokens"))?;
                stage2_total += ms;
            }
        }
    }
    let gate_expected = gate_total / n;
    let full_expected = (gate_total + stage2_total) / n;

    let eval = evaluator(Arc::new(MockBackend::new(fx.mock_script(), latency)), &taxonomy);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let full = rt.block_on(run_bench(&eval, &fx.dataset, Mode::Full, 0, 1, 8)).map_err(|e| e.to_string())?;
    let gate = rt.block_on(run_bench(&eval, &fx.dataset, Mode::Gate, 0, 1, 8)).map_err(|e| e.to_string())?;
    let (full_ms, gate_ms) = (full.overall.model.mean_ms_per_example, gate.overall.model.mean_ms_per_example);
    ensure((full_ms - full_expected).abs() <= CLOSED_FORM_TOLERANCE, || format!("full {full_ms} vs {full_expected}"))?;
    ensure((gate_ms - gate_expected).abs() <= CLOSED_FORM_TOLERANCE, || format!("gate {gate_ms} vs {gate_expected}"))?;
    let ratio = gate_ms / full_ms;
    ensure(ratio <= SPEEDUP_MAX_RATIO, || format!("gate/full = {ratio:.4} > {SPEEDUP_MAX_RATIO}"))?;
    Ok(format!("gate {gate_ms:.2} ms vs full {full_ms:.2} ms per example, ratio {ratio:.4} <= {SPEEDUP_MAX_RATIO}"))
}

// ---- parser fuzz ---------------------------------------------------------

fn mutate(rng: &mut ChaCha8Rng, seed_text: &str) -> Vec<u8> {
    let mut bytes = seed_text.as_bytes().to_vec();
    for _ in 0..rng.random_range(1..=8) {
        let len = bytes.len();
        match rng.random_range(0..7) {
            0 if len > 0 => {
                bytes.remove(rng.random_range(0..len));
            }
            1 => bytes.insert(rng.random_range(0..=len), rng.random()),
            2 if len > 0 => bytes[rng.random_range(0..len)] = rng.random(),
            3 => {
                let tok: &[u8] = [&b"Severity: -9"[..], b"Score: 12", b"|", b"\n", b"Reliability", b"-", b"\xff\xfe"]
                    .choose(rng)
                    .unwrap();
                let at = rng.random_range(0..=len);
                bytes.splice(at..at, tok.iter().copied());
            }
            4 if len > 1 => {
                let a = rng.random_range(0..len);
                let b = rng.random_range(a..len);
                bytes.drain(a..b);
            }
            5 if len > 1 => {
                let a = rng.random_range(0..len);
                let b = rng.random_range(a..len);
                let copy = bytes[a..b].to_vec();
                bytes.splice(a..a, copy);
            }
            _ => bytes.truncate(rng.random_range(0..=len)),
        }
    }
    bytes
}

fn parser_fuzz() -> Check {
    let (fx, taxonomy) = fixture();
    let seeds: Vec<(&str, String)> = fx
        .script
        .iter()
        .filter(|e| e.stage == Stage::Two)
        .map(|e| {
            let id = e.example_id.as_deref().unwrap();
            (e.response.as_str(), fx.dataset.get(id).unwrap().output.clone())
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut ok, mut errors, mut panics) = (0, 0, 0);
    for i in 0..10_000 {
        let (text, output) = seeds.choose(&mut rng).unwrap();
        let input: Vec<u8> = if i % 5 == 0 {
            (0..rng.random_range(0..400)).map(|_| rng.random()).collect()
        } else {
            mutate(&mut rng, text)
        };
        let mode = if rng.random_bool(0.5) { ParseMode::Strict } else { ParseMode::Lenient };
        let result = catch_unwind(AssertUnwindSafe(|| {
            let stage1 = parse_stage1(&String::from_utf8_lossy(&input), &taxonomy, mode).is_ok();
            (stage1, parse_stage2_bytes(&input, &taxonomy, output, mode))
        }));
        match result {
            Err(_) => panics += 1,
            Ok((_, Ok((report, _)))) => {
                if let Some(f) = report.findings.iter().find(|f| !(-5..=-1).contains(&f.severity)) {
                    return Err(format!("input {i}: severity {} escaped the parser", f.severity));
                }
                ok += 1;
            }
            Ok((_, Err(_))) => errors += 1,
        }
    }
    ensure(panics == 0, || format!("{panics} panics"))?;
    Ok(format!("10000 inputs: {ok} parsed, {errors} structured errors, 0 panics"))
}

// ---- end-to-end through the binary --------------------------------------

fn gatecheck(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gatecheck"))
        .args(args)
        .env_remove("EVAL_BASE_URL")
        .env_remove("GATECHECK_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!("gatecheck {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    gatecheck(&["demo", "--out-dir", s(d)])?;
    let config = d.join("gatecheck.toml");
    let dataset = d.join("dataset.jsonl");
    let mut outcomes = Vec::new();
    let mut tables = Vec::new();
    for (i, c) in ["1", "1", "8", "8"].iter().enumerate() {
        let out = d.join(format!("run{i}.jsonl"));
        gatecheck(&["--config", s(&config), "--seed", "11", "evaluate", s(&dataset), "--mode", "full", "--concurrency", c, "--out", s(&out)])?;
        outcomes.push(std::fs::read(&out).map_err(|e| e.to_string())?);
        tables.push(gatecheck(&["metrics", s(&dataset), s(&out)])?.stdout);
    }
    ensure(outcomes.windows(2).all(|w| w[0] == w[1]), || "outcome files differ".into())?;
    ensure(tables.windows(2).all(|w| w[0] == w[1]), || "metrics tables differ".into())?;
    Ok(format!("4 runs (concurrency 1,1,8,8): identical outcomes ({} bytes) and metrics tables", outcomes[0].len()))
}

fn sft_export() -> Check {
    let (fx, taxonomy) = fixture();
    let templates = StageTemplates::default();
    let options = PromptOptions::default();
    let targets = |seed: u64| -> Result<Vec<String>, String> {
        let records = export_sft(&fx.dataset, &taxonomy, &templates, &options, seed).map_err(|e| e.to_string())?;
        ensure(records.len() == 2 * fx.dataset.len(), || format!("{} records", records.len()))?;
        let mut t: Vec<String> = records.iter().map(|r| format!("{}:{}", r.stage.number(), r.target())).collect();
        t.sort();
        Ok(t)
    };
    let base = targets(0)?;
    for seed in 1..5 {
        ensure(targets(seed)? == base, || format!("target multiset changed with seed {seed}"))?;
    }
    let records = export_sft(&fx.dataset, &taxonomy, &templates, &options, 0).map_err(|e| e.to_string())?;
    let head_stages: BTreeSet<u8> = records[..fx.dataset.len()].iter().map(|r| r.stage.number()).collect();
    ensure(head_stages.len() == 2, || "stages are not intermixed".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    gatecheck(&["demo", "--out-dir", s(d)])?;
    let (a, b) = (d.join("a.jsonl"), d.join("b.jsonl"));
    for out in [&a, &b] {
        gatecheck(&["export-sft", s(&d.join("dataset.jsonl")), "--seed", "9", "--out", s(out)])?;
    }
    let (fa, fb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    ensure(fa == fb, || "same seed gave different files".into())?;
    Ok(format!("{} records from {} examples, targets seed-invariant, same seed byte-identical", records.len(), fx.dataset.len()))
}

// ---- service -------------------------------------------------------------

struct Running {
    client: Client,
    stop: tokio::sync::oneshot::Sender<()>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

async fn start(fx: &Fixture, taxonomy: &Taxonomy, journal: &Path) -> Result<Running, String> {
    let mock = Arc::new(MockBackend::new(fx.mock_script(), MockLatency::default()));
    let eval = evaluator(mock.clone(), taxonomy);
    let outcomes = run_batch(&eval, &fx.dataset, Mode::Full, 8).await.map_err(|e| e.to_string())?;
    let store = AnnotationStore::open(journal).map_err(|e| e.to_string())?;
    let session = Session::new(fx.dataset.clone(), outcomes, taxonomy.clone(), store).map_err(|e| e.to_string())?;
    let state = AppState::new(evaluator(mock, taxonomy), Some(session), ServiceConfig::default());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let (tx, rx) = tokio::sync::oneshot::channel();
    let handle = tokio::spawn(serve(listener, state, async {
        let _ = rx.await;
    }));
    Ok(Running { client: Client::new(format!("http://{addr}")), stop: tx, handle })
}

async fn stop(r: Running) -> Result<(), String> {
    let _ = r.stop.send(());
    r.handle.await.map_err(|e| e.to_string())?.map_err(|e| e.to_string())
}

async fn service_consistency_async() -> Check {
    let (fx, taxonomy) = fixture();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let journal = dir.path().join("journal.jsonl");

    let server = start(&fx, &taxonomy, &journal).await?;
    let requests: Vec<EvaluateRequest> =
        (0..64).map(|i| EvaluateRequest::from(&fx.dataset.examples[i % fx.dataset.len()])).collect();
    let mut sequential = Vec::new();
    for r in &requests {
        sequential.push(server.client.gate(r).await.map_err(|e| e.to_string())?);
    }
    let concurrent = futures::future::join_all(requests.iter().map(|r| server.client.gate(r))).await;
    for (i, (c, s)) in concurrent.into_iter().zip(&sequential).enumerate() {
        let c = c.map_err(|e| format!("request {i}: {e}"))?;
        ensure(c.categories == s.categories && c.binary_score == s.binary_score, || format!("request {i} differs"))?;
    }

    for k in 0..5u64 {
        let item = server.client.next_item("acc").await.map_err(|e| e.to_string())?.ok_or("queue empty")?;
        let n = item.outcome.report.as_ref().map_or(0, |r| r.findings.len());
        let verdicts = (0..n)
            .map(|i| FindingVerdict { finding_index: i, verdict: if (i as u64 + k).is_multiple_of(3) { Verdict::Spurious } else { Verdict::Real } })
            .collect();
        let submission = AnnotationSubmission {
            example_id: item.example.id.clone(),
            annotator: "acc".into(),
            dimension_scores: [1.0 + (k % 5) as f64, 3.0, 4.5],
            finding_verdicts: verdicts,
            missed_errors: Vec::new(),
            timestamp: Some(10 + k),
        };
        server.client.submit(&submission).await.map_err(|e| e.to_string())?;
    }
    let before = server.client.raw(HttpMethod::GET, "/v1/metrics?level=sub", None).await.map_err(|e| e.to_string())?;
    stop(server).await?;

    let restarted = start(&fx, &taxonomy, &journal).await?;
    let after = restarted.client.raw(HttpMethod::GET, "/v1/metrics?level=sub", None).await.map_err(|e| e.to_string())?;
    stop(restarted).await?;
    ensure(before.0 == 200, || format!("metrics status {}", before.0))?;
    ensure(before == after, || "metrics changed after journal replay".into())?;
    Ok(format!("64 concurrent gates equal sequential; replay reproduces /v1/metrics ({} bytes)", before.1.len()))
}

fn service_consistency() -> Check {
    tokio::runtime::Runtime::new().map_err(|e| e.to_string())?.block_on(service_consistency_async())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("tau-b oracle", tau_oracle),
        ("pearson oracle", pearson_oracle),
        ("EC/VR/EC' oracle", coverage_oracle),
        ("severity-sum rule", severity_sum),
        ("early-exit exactness", early_exit),
        ("determinism", determinism),
        ("parser fuzz", parser_fuzz),
        ("cascade speedup", cascade_speedup),
        ("SFT export", sft_export),
        ("service consistency", service_consistency),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
