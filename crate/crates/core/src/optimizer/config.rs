use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::BackendDescriptor;
use crate::objective::{ObjectiveSpec, PromptSpec, Template};

/// A field-level validation failure.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    AdamW,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "adamw" => Ok(Self::AdamW),
            "sgd" => Ok(Self::Sgd),
            _ => Err(format!("unknown optimizer `{s}` (adam, adamw, sgd)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientStrategy {
    /// Analytic when the backend has pullbacks, else central differences if
    /// they fit the call budget, else SPSA.
    Auto,
    Analytic,
    FdCentral,
    Spsa,
}

impl std::str::FromStr for GradientStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Self::Auto),
            "analytic" => Ok(Self::Analytic),
            "fd" | "fd_central" => Ok(Self::FdCentral),
            "spsa" => Ok(Self::Spsa),
            _ => Err(format!("unknown gradient strategy `{s}` (auto, analytic, fd, spsa)")),
        }
    }
}

/// Which image the loop evaluates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeOn {
    /// Preprocess once, then apply the matrix to the encoder-sized thumbnail.
    #[default]
    Thumbnail,
    /// Apply the matrix to the full image and preprocess every iteration.
    FullImage,
}

/// Everything that determines one tuning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub objective: ObjectiveSpec,
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "defaults::gradient")]
    pub gradient: GradientStrategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::snapshot_every")]
    pub snapshot_every: usize,
    /// Backend name; `None` means the caller's default backend.
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default = "defaults::fd_step")]
    pub fd_step: f64,
    #[serde(default = "defaults::spsa_step")]
    pub spsa_step: f64,
    /// Most backend calls `auto` may spend on central differences.
    #[serde(default = "defaults::fd_call_budget")]
    pub fd_call_budget: usize,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    /// Stop once the best loss has not improved by more than 1e-5 for 100 iterations.
    #[serde(default)]
    pub early_stop: bool,
    #[serde(default)]
    pub optimize_on: OptimizeOn,
}

pub(crate) mod defaults {
    use super::*;

    pub fn tau() -> f64 {
        0.25
    }
    pub fn iterations() -> usize {
        1000
    }
    pub fn learning_rate() -> f64 {
        2e-3
    }
    pub fn optimizer() -> OptimizerKind {
        OptimizerKind::Adam
    }
    pub fn gradient() -> GradientStrategy {
        GradientStrategy::Auto
    }
    pub fn snapshot_every() -> usize {
        50
    }
    pub fn fd_step() -> f64 {
        1e-3
    }
    pub fn spsa_step() -> f64 {
        1e-2
    }
    pub fn fd_call_budget() -> usize {
        5_000
    }
    pub fn weight_decay() -> f64 {
        1e-2
    }
}

pub const PLATEAU_WINDOW: usize = 100;
pub const PLATEAU_MIN_IMPROVEMENT: f64 = 1e-5;

impl TuneConfig {
    /// Defaults for everything except the objective.
    pub fn new(objective: ObjectiveSpec) -> Self {
        Self {
            objective,
            tau: defaults::tau(),
            iterations: defaults::iterations(),
            learning_rate: defaults::learning_rate(),
            optimizer: defaults::optimizer(),
            gradient: defaults::gradient(),
            seed: 0,
            snapshot_every: defaults::snapshot_every(),
            backend: None,
            fd_step: defaults::fd_step(),
            spsa_step: defaults::spsa_step(),
            fd_call_budget: defaults::fd_call_budget(),
            weight_decay: defaults::weight_decay(),
            early_stop: false,
            optimize_on: OptimizeOn::Thumbnail,
        }
    }

    /// Single-prompt config with template B.
    pub fn for_keyword(keyword: &str) -> Self {
        Self::new(ObjectiveSpec::single(PromptSpec::new(Template::B, keyword)))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.objective.validate().map_err(|e| ConfigError::new("objective", e.to_string()))?;
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("must be a positive number, got {v}")))
            }
        };
        positive("tau", self.tau)?;
        positive("learning_rate", self.learning_rate)?;
        positive("fd_step", self.fd_step)?;
        positive("spsa_step", self.spsa_step)?;
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ConfigError::new("weight_decay", "must be non-negative"));
        }
        if self.iterations == 0 {
            return Err(ConfigError::new("iterations", "must be at least 1"));
        }
        if self.snapshot_every == 0 {
            return Err(ConfigError::new("snapshot_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Concrete strategy for a backend.
    pub fn resolve_gradient(&self, backend: &BackendDescriptor) -> GradientStrategy {
        match self.gradient {
            GradientStrategy::Auto if backend.supports_pullback => GradientStrategy::Analytic,
            GradientStrategy::Auto if self.iterations.saturating_mul(13) <= self.fd_call_budget => {
                GradientStrategy::FdCentral
            }
            GradientStrategy::Auto => GradientStrategy::Spsa,
            other => other,
        }
    }
}
