use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use gatecheck_core::annotation::{items_from_annotations, load_journal, AnnotationIndex};
use gatecheck_core::bench::{compare, run_bench, BenchError};
use gatecheck_core::datamodel::{export_sft, load_dataset, sample_split, scan_dataset, write_sft, Dataset, DatasetError};
use gatecheck_core::fixture::{generate, FixtureSpec};
use gatecheck_core::metrics::{summarize, summarize_items, Level};
use gatecheck_core::pipeline::{load_outcomes, outcomes_to_jsonl, run_batch, Mode, OutcomeFileError, OutcomeRecord};
use gatecheck_core::taxonomy::Taxonomy;

use crate::cli::{BenchModeArg, Format, LevelArg, ModeArg};
use crate::exit::{Failure, OrFail, Outcome};
use crate::settings::Resolved;

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Gate => Mode::Gate,
            ModeArg::Full => Mode::Full,
        }
    }
}

impl From<LevelArg> for Level {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Principal => Level::Principal,
            LevelArg::Sub => Level::Sub,
        }
    }
}

pub fn dataset(path: &Path, taxonomy: &Taxonomy) -> Result<Dataset, Failure> {
    load_dataset(path, taxonomy).map_err(|e| match e {
        DatasetError::Io { .. } => Failure::Io(e.into()),
        _ => Failure::Invalid(anyhow::Error::new(e).context(format!("dataset {}", path.display()))),
    })
}

pub fn write_file(path: &Path, text: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).io()?;
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())).io()
}

fn print(text: &str) -> Outcome {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).io()
}

pub fn validate(resolved: &Resolved, path: &Path, strict: bool) -> Outcome {
    let report = scan_dataset(path, &resolved.taxonomy).io()?;
    let mut text = String::new();
    for v in &report.violations {
        text.push_str(&format!("{}: {v}\n", path.display()));
    }
    let errors = report.violations.iter().filter(|v| v.is_error()).count();
    let warnings = report.violations.len() - errors;
    text.push_str(&format!("{} examples, {errors} errors, {warnings} warnings\n", report.examples));
    print(&text)?;
    if errors > 0 || (strict && warnings > 0) {
        return Err(Failure::Invalid(anyhow!("{} failed validation", path.display())));
    }
    Ok(())
}

pub async fn evaluate(resolved: &Resolved, path: &Path, mode: Mode, out: &Path, concurrency: usize) -> Outcome {
    let data = dataset(path, &resolved.taxonomy)?;
    let evaluator = resolved.evaluator()?;
    let records = run_batch(&evaluator, &data, mode, concurrency).await.usage()?;
    finish_outcomes(&records, &resolved.header(), out)
}

pub fn finish_outcomes(records: &[OutcomeRecord], header: &serde_json::Value, out: &Path) -> Outcome {
    write_file(out, &outcomes_to_jsonl(records, Some(header)))?;
    let failed: Vec<&str> = records.iter().filter(|r| r.outcome().is_none()).map(|r| r.example_id()).collect();
    let flagged = records.iter().filter_map(|r| r.outcome()).filter(|o| !o.categories.is_empty()).count();
    eprintln!(
        "{} outcomes written to {} ({flagged} flagged, {} failed)",
        records.len(),
        out.display(),
        failed.len()
    );
    for r in records {
        if let OutcomeRecord::Failed(f) = r {
            eprintln!("  {f}");
        }
    }
    if !records.is_empty() && failed.len() == records.len() {
        return Err(Failure::Io(anyhow!("every example failed")));
    }
    Ok(())
}

fn outcomes(path: &Path) -> Result<Vec<OutcomeRecord>, Failure> {
    load_outcomes(path)
        .map(|f| f.records)
        .map_err(|e| match e {
            OutcomeFileError::Io(_) => Failure::Io(anyhow::Error::new(e).context(format!("outcomes {}", path.display()))),
            _ => Failure::Invalid(anyhow::Error::new(e).context(format!("outcomes {}", path.display()))),
        })
}

pub struct MetricsArgs<'a> {
    pub dataset: &'a Path,
    pub outcomes: &'a Path,
    pub level: Level,
    pub journal: Option<&'a Path>,
    pub format: Format,
    pub json_out: Option<&'a Path>,
}

pub fn metrics(resolved: &Resolved, args: MetricsArgs<'_>) -> Outcome {
    let data = dataset(args.dataset, &resolved.taxonomy)?;
    let records = outcomes(args.outcomes)?;
    let report = match args.journal {
        None => summarize(&records, &data, args.level).invalid()?,
        Some(journal) => {
            let index = AnnotationIndex::from_records(
                &load_journal(journal).with_context(|| format!("journal {}", journal.display())).io()?,
            );
            let items = items_from_annotations(&data, &records, &index, args.level);
            if items.is_empty() {
                return Err(Failure::Invalid(anyhow!("no annotated examples match the outcomes")));
            }
            summarize_items(&items, args.level, Vec::new())
        }
    };
    let json = report.to_json() + "\n";
    if let Some(p) = args.json_out {
        write_file(p, &json)?;
    }
    match args.format {
        Format::Table => print(&report.to_table(&resolved.taxonomy)),
        Format::Json => print(&json),
        Format::Both => print(&(report.to_table(&resolved.taxonomy) + "\n" + &json)),
    }
}

pub struct BenchArgs<'a> {
    pub dataset: &'a Path,
    pub mode: BenchModeArg,
    pub warmup: usize,
    pub repetitions: usize,
    pub concurrency: usize,
    pub json_out: Option<&'a Path>,
}

pub async fn bench(resolved: &Resolved, args: BenchArgs<'_>) -> Outcome {
    let data = dataset(args.dataset, &resolved.taxonomy)?;
    let evaluator = resolved.evaluator()?;
    let modes: &[Mode] = match args.mode {
        BenchModeArg::Gate => &[Mode::Gate],
        BenchModeArg::Full => &[Mode::Full],
        BenchModeArg::Both => &[Mode::Full, Mode::Gate],
    };
    let mut stats = Vec::new();
    for &mode in modes {
        let s = run_bench(&evaluator, &data, mode, args.warmup, args.repetitions, args.concurrency)
            .await
            .map_err(|e| match e {
                BenchError::Failed(_) => Failure::Io(e.into()),
                _ => Failure::Usage(e.into()),
            })?;
        stats.push(s);
    }
    let mut text = String::new();
    for s in &stats {
        text.push_str(&s.to_table());
        text.push('\n');
    }
    let comparison = match stats.as_slice() {
        [full, gate] => Some(compare(full, gate).invalid()?),
        _ => None,
    };
    if let Some(c) = &comparison {
        text.push_str(&c.to_table());
    }
    print(&text)?;
    if let Some(p) = args.json_out {
        let json = serde_json::json!({
            "run_config": resolved.run,
            "concurrency": args.concurrency,
            "stats": stats,
            "comparison": comparison,
        });
        write_file(p, &(serde_json::to_string_pretty(&json).expect("bench json") + "\n"))?;
    }
    Ok(())
}

pub fn export(resolved: &Resolved, path: &Path, out: &Path) -> Outcome {
    let data = dataset(path, &resolved.taxonomy)?;
    let records =
        export_sft(&data, &resolved.taxonomy, &resolved.templates, &resolved.run.prompt, resolved.run.seed).invalid()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).io()?;
    }
    write_sft(&records, out).io()?;
    eprintln!("{} records written to {}", records.len(), out.display());
    Ok(())
}

pub fn split(resolved: &Resolved, path: &Path, ratios: &[f64], names: &[String], out_dir: &Path) -> Outcome {
    if !names.is_empty() && names.len() != ratios.len() {
        return Err(Failure::Usage(anyhow!("{} names for {} ratios", names.len(), ratios.len())));
    }
    let data = dataset(path, &resolved.taxonomy)?;
    let parts = sample_split(&data, ratios, resolved.run.seed).usage()?;
    for (i, part) in parts.iter().enumerate() {
        let name = names.get(i).cloned().unwrap_or_else(|| format!("part-{}", i + 1));
        let file = out_dir.join(format!("{name}.jsonl"));
        write_file(&file, &part.to_jsonl())?;
        eprintln!("{} examples written to {}", part.len(), file.display());
    }
    Ok(())
}

pub fn demo(resolved: &Resolved, seed: Option<u64>, out_dir: &Path, examples: usize, clean: usize) -> Outcome {
    if clean > examples {
        return Err(Failure::Usage(anyhow!("--clean {clean} exceeds --examples {examples}")));
    }
    let spec = FixtureSpec { examples, clean, seed: seed.unwrap_or(FixtureSpec::default().seed) };
    let fixture = generate(&spec, &resolved.taxonomy);
    let dataset_path = out_dir.join("dataset.jsonl");
    write_file(&dataset_path, &fixture.dataset.to_jsonl())?;
    write_file(&out_dir.join("mock.jsonl"), &fixture.script_jsonl())?;
    let config: PathBuf = out_dir.join("gatecheck.toml");
    write_file(&config, "seed = 0\n\n[backend]\nkind = \"mock\"\nscript = \"mock.jsonl\"\n")?;
    eprintln!("wrote {} examples to {}", fixture.dataset.len(), out_dir.display());
    eprintln!("try: gatecheck --config {} evaluate {} --out outcomes.jsonl", config.display(), dataset_path.display());
    Ok(())
}
