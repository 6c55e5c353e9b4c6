use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::RetryPolicy;
use crate::pipeline::PipelineConfig;
use crate::taxonomy::ClusteringConfig;

/// Invalid or inconsistent configuration, located by a dotted field path.
#[derive(Debug, thiserror::Error)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Where one model role is served from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    /// Replays a recorded transcript.
    Scripted { transcript: PathBuf },
    /// Any OpenAI-compatible server. The key comes from `GVL_API_KEY`.
    Openai {
        base_url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    120
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Describer,
    Classifier,
    Embedder,
    Clusterer,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Describer => "describer",
            Role::Classifier => "classifier",
            Role::Embedder => "embedder",
            Role::Clusterer => "clusterer",
        }
    }
}

/// Per-role backends; `default` serves any role left unset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub default: Option<BackendSpec>,
    pub describer: Option<BackendSpec>,
    pub classifier: Option<BackendSpec>,
    pub embedder: Option<BackendSpec>,
    pub clusterer: Option<BackendSpec>,
}

impl BackendsConfig {
    /// The backend for `role` and the config field it came from.
    pub fn for_role(&self, role: Role) -> Result<(&BackendSpec, String), ConfigError> {
        let own = match role {
            Role::Describer => &self.describer,
            Role::Classifier => &self.classifier,
            Role::Embedder => &self.embedder,
            Role::Clusterer => &self.clusterer,
        };
        match (own, &self.default) {
            (Some(spec), _) => Ok((spec, format!("backends.{}", role.as_str()))),
            (None, Some(spec)) => Ok((spec, "backends.default".into())),
            (None, None) => Err(ConfigError::new(
                format!("backends.{}", role.as_str()),
                "no backend configured for this role and no backends.default",
            )),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    /// Concurrent requests across all backends.
    pub max_in_flight: Option<usize>,
    /// Per-backend request rate.
    pub requests_per_second: Option<f64>,
    /// Worker threads for patch-level parallelism.
    pub workers: Option<usize>,
    pub retry: RetryPolicy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    /// Meta-class counts per level, coarse to fine.
    pub sizes: Vec<usize>,
    pub settings: ClusteringConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Output directories of the runs to score; defaults to `out_dir`.
    pub runs: Vec<PathBuf>,
}

/// One experiment definition, read from TOML.
///
/// Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub classes: Option<Vec<String>>,
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// `[rows, cols]` of the patch grid.
    #[serde(default = "default_grid")]
    pub grid: [u32; 2],
    pub split: Option<String>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_grid() -> [u32; 2] {
    [1, 1]
}

fn default_cache_dir() -> PathBuf {
    "cache".into()
}

fn default_out_dir() -> PathBuf {
    "out".into()
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let value: toml::Value = toml::from_str(text).map_err(|e| ConfigError::new("$", e.message()))?;
        let mut cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(if path.is_empty() { "$".into() } else { path }, e.into_inner().to_string())
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("$", format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.classes, &self.taxonomy) {
            (Some(_), Some(_)) => return Err(ConfigError::new("classes", "set either classes or taxonomy, not both")),
            (None, None) => return Err(ConfigError::new("classes", "one of classes or taxonomy is required")),
            (Some(c), None) if c.is_empty() => return Err(ConfigError::new("classes", "the class list is empty")),
            _ => {}
        }
        if let Some(classes) = &self.classes {
            crate::taxonomy::class_set(classes).map_err(|e| ConfigError::new("classes", e.to_string()))?;
        }
        if self.grid.contains(&0) {
            return Err(ConfigError::new("grid", "rows and columns must be positive"));
        }
        self.pipeline
            .prompt
            .validate()
            .map_err(|e| ConfigError::new("pipeline.prompt", e.to_string()))?;
        if self.cluster.sizes.contains(&0) {
            return Err(ConfigError::new("cluster.sizes", "sizes must be positive"));
        }
        if self.limits.max_in_flight == Some(0) {
            return Err(ConfigError::new("limits.max_in_flight", "must be positive"));
        }
        if let Some(rps) = self.limits.requests_per_second {
            if !(rps > 0.0 && rps.is_finite()) {
                return Err(ConfigError::new("limits.requests_per_second", "must be a positive number"));
            }
        }
        if self.limits.workers == Some(0) {
            return Err(ConfigError::new("limits.workers", "must be positive"));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.resolve(&self.cache_dir)
    }

    /// Digest of the effective settings (after overrides).
    pub fn digest(&self) -> String {
        let doc = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(doc))
    }
}
