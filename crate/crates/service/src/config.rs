use std::path::{Path, PathBuf};

use ccmtune_core::embedding::{BackendKind, BackendSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_CONFIG: &str = "CCMTUNE_CONFIG";
pub const ENV_DATA_DIR: &str = "CCMTUNE_DATA_DIR";
pub const ENV_WORKERS: &str = "CCMTUNE_WORKERS";

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Service configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_queue_limit")]
    pub queue_limit: usize,
    /// Registry of named backends. Jobs that name no backend use the first.
    #[serde(default = "default_backends")]
    pub backends: Vec<BackendSpec>,
    /// Directory of static UI files served under `/ui`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("ccmtune-data")
}

fn default_workers() -> usize {
    2
}

fn default_queue_limit() -> usize {
    64
}

fn default_backends() -> Vec<BackendSpec> {
    vec![BackendSpec {
        name: "synthetic".into(),
        kind: BackendKind::Synthetic,
        graph_paths: None,
        url: None,
        input_size: None,
    }]
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: default_data_dir(),
            workers: default_workers(),
            queue_limit: default_queue_limit(),
            backends: default_backends(),
            ui_dir: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigFileError> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| ConfigFileError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    /// Resolves the effective configuration: `explicit` path, else
    /// `CCMTUNE_CONFIG`, else defaults; then the data-dir and worker
    /// overrides from the environment.
    pub fn resolve(
        explicit: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigFileError> {
        let path = explicit.map(Path::to_path_buf).or_else(|| env(ENV_CONFIG).map(PathBuf::from));
        let mut cfg = match path {
            Some(p) => Self::load(&p)?,
            None => Self::default(),
        };
        if let Some(dir) = env(ENV_DATA_DIR) {
            cfg.data_dir = PathBuf::from(dir);
        }
        if let Some(w) = env(ENV_WORKERS) {
            cfg.workers = w
                .trim()
                .parse()
                .map_err(|_| ConfigFileError::Invalid(format!("{ENV_WORKERS}={w} is not a count")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigFileError> {
        if self.workers == 0 {
            return Err(ConfigFileError::Invalid("workers must be at least 1".into()));
        }
        if self.queue_limit == 0 {
            return Err(ConfigFileError::Invalid("queue_limit must be at least 1".into()));
        }
        if self.backends.is_empty() {
            return Err(ConfigFileError::Invalid("at least one backend is required".into()));
        }
        for (i, b) in self.backends.iter().enumerate() {
            if self.backends[..i].iter().any(|o| o.name == b.name) {
                return Err(ConfigFileError::Invalid(format!("duplicate backend name `{}`", b.name)));
            }
        }
        Ok(())
    }
}
