//! Aggregated TOML configuration. Relative paths resolve against the
//! directory of the config file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::answer::VerifierConfig;
use crate::image_agent::ImageAgentConfig;
use crate::preanswer::PreAnswerConfig;
use crate::rerank::RerankConfig;
use crate::routing::RoutingConfig;
use crate::search::SearchConfig;
use crate::text_agent::TextAgentConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Web corpus JSONL.
    pub web_corpus: Option<PathBuf>,
    /// Image-KG corpus JSONL.
    pub kg_corpus: Option<PathBuf>,
    /// Directory of image fixture JSON files, or a JSONL file.
    pub images: Option<PathBuf>,
    /// Scripted model responses JSONL.
    pub model_fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Scripted fixtures, honoring their latency.
    #[default]
    Mock,
    /// Recorded fixtures, returned immediately.
    Replay,
    /// JSON over HTTP to `endpoint`.
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Implementation {
    /// Local deterministic rules or fixtures.
    #[default]
    Local,
    /// Model call through the gateway.
    Gateway,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComponentsConfig {
    pub domain_classifier: Implementation,
    pub tool_router: Implementation,
    pub entity_verifier: Implementation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub turn_deadline_ms: u64,
    pub session_budget_ms: u64,
    /// Branch toggles: with a toggle off the matching toolchain is skipped.
    pub enable_visual_toolchain: bool,
    pub enable_text_toolchain: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            turn_deadline_ms: 10_000,
            session_budget_ms: 30_000,
            enable_visual_toolchain: true,
            enable_text_toolchain: true,
        }
    }
}

impl PipelineConfig {
    pub fn turn_deadline(&self) -> Duration {
        Duration::from_millis(self.turn_deadline_ms)
    }

    pub fn session_budget(&self) -> Duration {
        Duration::from_millis(self.session_budget_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Worker threads for running records; 0 means one per core.
    pub parallelism: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { parallelism: 4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub paths: PathsConfig,
    pub gateway: GatewayConfig,
    pub components: ComponentsConfig,
    pub search: SearchConfig,
    pub preanswer: PreAnswerConfig,
    pub routing: RoutingConfig,
    pub image_agent: ImageAgentConfig,
    pub text_agent: TextAgentConfig,
    pub rerank: RerankConfig,
    pub verifier: VerifierConfig,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse `path` and resolve relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: Config = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.paths.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.preanswer
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.rerank
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.verifier.validate().map_err(ConfigError::Invalid)?;
        if self.search.encoder.dim == Some(0) {
            return invalid("search.encoder.dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.search.hard_negative.rate) {
            return invalid("search.hard_negative.rate must lie in [0, 1]".into());
        }
        if self.image_agent.object_num == 0 {
            return invalid("image_agent.object_num must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.image_agent.entity_threshold) {
            return invalid("image_agent.entity_threshold must lie in [0, 1]".into());
        }
        if self.pipeline.turn_deadline_ms == 0 || self.pipeline.session_budget_ms == 0 {
            return invalid("pipeline deadlines must be positive".into());
        }
        if self.gateway.backend == BackendKind::Remote && self.gateway.endpoint.is_none() {
            return invalid("gateway.endpoint is required for the remote backend".into());
        }
        Ok(())
    }
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.web_corpus,
            &mut self.kg_corpus,
            &mut self.images,
            &mut self.model_fixtures,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
