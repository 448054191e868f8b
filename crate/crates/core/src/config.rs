//! Backend and template settings shared by the command line and the server.
//!
//! Settings never carry credentials; the HTTP backend reads its key from the
//! environment only.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, HttpBackend, HttpConfig, MockBackend, MockLatency, MockScript, MockScriptError};
use crate::prompt::{InstructionTemplate, PromptError, Stage, StageTemplates};

pub const BASE_URL_ENV: &str = "EVAL_BASE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSettings {
    Mock {
        script: PathBuf,
        #[serde(default)]
        latency: MockLatency,
        /// Sleep for the simulated latency instead of returning at once.
        #[serde(default)]
        real_time: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
    },
    Http(HttpConfig),
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings::Http(HttpConfig::default())
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Mock(#[from] MockScriptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("cannot read template {path}: {source}")]
    TemplateIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("template {path}: {source}")]
    Template {
        path: PathBuf,
        #[source]
        source: PromptError,
    },
}

impl ConfigError {
    /// True for errors caused by files that could not be read.
    pub fn is_io(&self) -> bool {
        matches!(self, ConfigError::Mock(MockScriptError::Io(_)) | ConfigError::TemplateIo { .. })
    }
}

pub fn build_backend(settings: &BackendSettings) -> Result<Arc<dyn Backend>, ConfigError> {
    Ok(match settings {
        BackendSettings::Mock { script, latency, real_time, timeout_ms } => Arc::new(
            MockBackend::new(MockScript::load(script)?, *latency)
                .real_time(*real_time)
                .timeout(timeout_ms.map(Duration::from_millis)),
        ),
        BackendSettings::Http(config) => Arc::new(HttpBackend::from_env(config.clone())?),
    })
}

fn load_template(stage: Stage, path: &Path) -> Result<InstructionTemplate, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::TemplateIo { path: path.to_path_buf(), source })?;
    InstructionTemplate::parse(stage, &text).map_err(|source| ConfigError::Template { path: path.to_path_buf(), source })
}

/// Loads custom templates; stages without a path use the built-in template.
pub fn load_templates(stage1: Option<&Path>, stage2: Option<&Path>) -> Result<StageTemplates, ConfigError> {
    let mut t = StageTemplates::default();
    if let Some(p) = stage1 {
        t.stage1 = load_template(Stage::One, p)?;
    }
    if let Some(p) = stage2 {
        t.stage2 = load_template(Stage::Two, p)?;
    }
    Ok(t)
}
