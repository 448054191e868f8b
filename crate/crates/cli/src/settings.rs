//! Effective run configuration: flags, then environment, then the config
//! file, then defaults. The resolved value is written into output headers.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use gatecheck_core::backend::{DecodeParams, HttpConfig, MockLatency};
use gatecheck_core::config::{build_backend, load_templates, BackendSettings};
use gatecheck_core::parser::ParseMode;
use gatecheck_core::pipeline::{Evaluator, EvaluatorConfig};
use gatecheck_core::prompt::{PromptOptions, StageTemplates, TemplateHashes};
use gatecheck_core::taxonomy::{default_taxonomy, load_taxonomy, Taxonomy};
use serde::{Deserialize, Serialize};

use crate::cli::{BackendKind, GlobalArgs};
use crate::exit::Failure;

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_CONCURRENCY: usize = 8;

/// The on-disk config file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub taxonomy: Option<PathBuf>,
    pub stage1_template: Option<PathBuf>,
    pub stage2_template: Option<PathBuf>,
    pub parse_mode: Option<ParseMode>,
    pub drop_unflagged_findings: Option<bool>,
    pub concurrency: Option<usize>,
    pub token_budget: Option<usize>,
    pub truncate_output: Option<bool>,
    pub backend: Option<BackendSettings>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(Failure::Io)?;
        let mut config: FileConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))
            .map_err(Failure::Usage)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        rebase(&mut config.taxonomy);
        rebase(&mut config.stage1_template);
        rebase(&mut config.stage2_template);
        if let Some(BackendSettings::Mock { script, .. }) = &mut config.backend {
            if script.is_relative() {
                *script = base.join(&*script);
            }
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub backend: BackendSettings,
    /// Taxonomy file, or "builtin".
    pub taxonomy: String,
    pub taxonomy_version: String,
    pub templates: TemplateHashes,
    pub seed: u64,
    pub parse_mode: ParseMode,
    pub drop_unflagged_findings: bool,
    pub prompt: PromptOptions,
    pub stage1: DecodeParams,
    pub stage2: DecodeParams,
    /// Kept out of headers: results do not depend on it.
    #[serde(skip)]
    pub concurrency: usize,
}

pub struct Resolved {
    pub run: RunConfig,
    pub taxonomy: Arc<Taxonomy>,
    pub templates: Arc<StageTemplates>,
}

fn resolve_backend(args: &GlobalArgs, file: Option<BackendSettings>) -> Result<BackendSettings, Failure> {
    let kind = args.backend.or(if args.mock_script.is_some() { Some(BackendKind::Mock) } else { None });
    let mut settings = match (kind, file) {
        (None, Some(s)) => s,
        (None, None) | (Some(BackendKind::Http), None) => BackendSettings::Http(HttpConfig::default()),
        (Some(BackendKind::Http), Some(BackendSettings::Http(c))) => BackendSettings::Http(c),
        (Some(BackendKind::Http), Some(BackendSettings::Mock { .. })) => BackendSettings::Http(HttpConfig::default()),
        (Some(BackendKind::Mock), Some(s @ BackendSettings::Mock { .. })) => s,
        (Some(BackendKind::Mock), _) => {
            let script = args
                .mock_script
                .clone()
                .ok_or_else(|| Failure::Usage(anyhow::anyhow!("the mock backend needs --mock-script")))?;
            BackendSettings::Mock { script, latency: MockLatency::default(), real_time: false, timeout_ms: None }
        }
    };
    match &mut settings {
        BackendSettings::Mock { script, timeout_ms, .. } => {
            if let Some(p) = &args.mock_script {
                *script = p.clone();
            }
            if args.timeout_ms.is_some() {
                *timeout_ms = args.timeout_ms;
            }
        }
        BackendSettings::Http(c) => {
            if let Some(url) = &args.base_url {
                c.base_url = url.clone();
            }
            if let Some(model) = &args.model {
                c.model = model.clone();
            }
            if let Some(t) = args.timeout_ms {
                c.timeout_ms = t;
            }
        }
    }
    Ok(settings)
}

pub fn resolve(args: &GlobalArgs) -> Result<Resolved, Failure> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let taxonomy_path = args.taxonomy.clone().or(file.taxonomy);
    let taxonomy = match &taxonomy_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read taxonomy {}", p.display()))
                .map_err(Failure::Io)?;
            load_taxonomy(&text).with_context(|| format!("taxonomy {}", p.display())).map_err(Failure::Usage)?
        }
        None => default_taxonomy(),
    };
    let s1 = args.stage1_template.clone().or(file.stage1_template);
    let s2 = args.stage2_template.clone().or(file.stage2_template);
    let templates = load_templates(s1.as_deref(), s2.as_deref()).map_err(|e| {
        if e.is_io() {
            Failure::Io(e.into())
        } else {
            Failure::Usage(e.into())
        }
    })?;

    let seed = args.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let parse_mode = if args.lenient { ParseMode::Lenient } else { file.parse_mode.unwrap_or_default() };
    let defaults = PromptOptions::default();
    let prompt = PromptOptions {
        token_budget: file.token_budget.unwrap_or(defaults.token_budget),
        truncate_output: file.truncate_output.unwrap_or(defaults.truncate_output),
    };
    let concurrency = file.concurrency.unwrap_or(DEFAULT_CONCURRENCY);
    if concurrency == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("concurrency must be at least 1")));
    }
    let run = RunConfig {
        backend: resolve_backend(args, file.backend)?,
        taxonomy: taxonomy_path.map_or_else(|| "builtin".to_string(), |p| p.display().to_string()),
        taxonomy_version: taxonomy.version().to_string(),
        templates: templates.hashes(),
        seed,
        parse_mode,
        drop_unflagged_findings: file.drop_unflagged_findings.unwrap_or(false),
        prompt,
        stage1: DecodeParams { seed: Some(seed), ..DecodeParams::stage1() },
        stage2: DecodeParams { seed: Some(seed), ..DecodeParams::stage2() },
        concurrency,
    };
    Ok(Resolved { run, taxonomy: Arc::new(taxonomy), templates: Arc::new(templates) })
}

impl Resolved {
    pub fn evaluator(&self) -> Result<Evaluator, Failure> {
        let backend = build_backend(&self.run.backend).map_err(|e| {
            if e.is_io() {
                Failure::Io(e.into())
            } else {
                Failure::Usage(e.into())
            }
        })?;
        let config = EvaluatorConfig {
            parse_mode: self.run.parse_mode,
            prompt: self.run.prompt,
            stage1: self.run.stage1.clone(),
            stage2: self.run.stage2.clone(),
            drop_unflagged_findings: self.run.drop_unflagged_findings,
        };
        Ok(Evaluator::new(backend, self.taxonomy.clone(), self.templates.clone(), config))
    }

    /// Header value for output files, stored under `run_config`.
    pub fn header(&self) -> serde_json::Value {
        serde_json::to_value(&self.run).expect("run config serializes")
    }
}
