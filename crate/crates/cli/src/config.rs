use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use studykit::chunking::ChunkConfig;
use studykit::layout::HeadingConfig;
use studykit::qagen::GenerationConfig;
use studykit::topics::DEFAULT_Z_THRESHOLD;

/// Everything a run can be configured with. Loaded from one TOML or JSON
/// file; command-line flags win over file values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub providers: Providers,
    pub chunking: ChunkConfig,
    pub headings: HeadingConfig,
    pub topics: TopicsConfig,
    pub generation: GenerationConfig,
    pub grading: GradingConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub blocks: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub topics: Option<PathBuf>,
    pub chunks: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub answers: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub question_template: Option<PathBuf>,
    pub answer_template: Option<PathBuf>,
    pub grading_template: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Providers {
    /// `mock:SEED` for offline runs; otherwise the endpoints below are used.
    pub provider: Option<String>,
    pub embed_url: Option<String>,
    pub embed_model: Option<String>,
    pub gen_url: Option<String>,
    pub gen_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicsConfig {
    pub z_threshold: f64,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        Self {
            z_threshold: DEFAULT_Z_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradingConfig {
    pub parallelism: usize,
}

impl Default for GradingConfig {
    fn default() -> Self {
        Self { parallelism: 4 }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("<unprintable config: {e}>"))
    }
}

/// A flag value, else the config value, else an error naming both.
pub fn pick(flag: &Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match flag.as_ref().or(config.as_ref()) {
        Some(p) => Ok(p.clone()),
        None => bail!("no {what} path: pass --{what} or set paths.{what} in the config file"),
    }
}
