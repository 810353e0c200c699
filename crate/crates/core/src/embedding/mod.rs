//! Vision-language embedding backends.
//!
//! Every backend takes geometry-preprocessed `[0, 1]` images of side
//! [`BackendDescriptor::input_size`]; any per-model photometric
//! normalization happens inside the backend, and pullbacks are taken with
//! respect to the `[0, 1]` input.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{PreprocessSpec, RgbImage};

#[cfg(feature = "graph")]
pub mod graph;
#[cfg(feature = "remote")]
pub mod remote;
pub mod synthetic;
pub mod wire;

pub use synthetic::SyntheticBackend;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("tokenization failed: {0}")]
    Tokenize(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("backend returned an invalid embedding: {0}")]
    InvalidOutput(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

/// A finite, non-zero embedding vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidOutput("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidOutput("non-finite component".into()));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(EmbedError::InvalidOutput("zero norm".into()));
        }
        Ok(Self(values))
    }

    /// L2-normalized copy of `values`.
    pub fn normalized(values: Vec<f64>) -> Result<Self, EmbedError> {
        let e = Self::new(values)?;
        let n = e.norm();
        Ok(Self(e.0.into_iter().map(|v| v / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Static metadata a backend reports about itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub architecture_id: String,
    pub weights_id: String,
    pub embed_dim: usize,
    pub input_size: usize,
    pub supports_pullback: bool,
}

impl BackendDescriptor {
    pub fn preprocess_spec(&self) -> PreprocessSpec {
        PreprocessSpec::square(self.input_size)
    }
}

/// Behavioral contract shared by all backends.
///
/// Implementations must be deterministic for identical inputs and safe to
/// call from several threads at once.
pub trait EmbeddingBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    fn embed_image(&self, img: &RgbImage) -> Result<Embedding, EmbedError>;

    fn embed_text(&self, prompt: &str) -> Result<Embedding, EmbedError>;

    /// Gradient of `<cotangent, embed_image(img)>` with respect to `img`.
    fn image_pullback(&self, img: &RgbImage, cotangent: &[f64]) -> Result<RgbImage, EmbedError> {
        let _ = (img, cotangent);
        Err(EmbedError::Unsupported(format!(
            "backend `{}` has no image pullback",
            self.descriptor().name
        )))
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for Arc<T> {
    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }

    fn embed_image(&self, img: &RgbImage) -> Result<Embedding, EmbedError> {
        (**self).embed_image(img)
    }

    fn embed_text(&self, prompt: &str) -> Result<Embedding, EmbedError> {
        (**self).embed_text(prompt)
    }

    fn image_pullback(&self, img: &RgbImage, cotangent: &[f64]) -> Result<RgbImage, EmbedError> {
        (**self).image_pullback(img, cotangent)
    }
}

pub(crate) fn check_input_shape(img: &RgbImage, input_size: usize) -> Result<(), EmbedError> {
    if img.width() != input_size || img.height() != input_size {
        return Err(EmbedError::Shape(format!(
            "expected {input_size}x{input_size} input, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// How a backend is constructed from configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Graph,
    Remote,
    Synthetic,
}

/// One entry of a backend registry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_paths: Option<GraphPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    /// Input side for the synthetic backend; defaults to 224.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_size: Option<usize>,
}

/// Files and constants for the exported-graph backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphPaths {
    pub image_encoder: std::path::PathBuf,
    pub text_encoder: std::path::PathBuf,
    pub tokenizer: std::path::PathBuf,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default = "default_context_length")]
    pub context_length: usize,
    #[serde(default = "default_mean")]
    pub mean: [f32; 3],
    #[serde(default = "default_std")]
    pub std: [f32; 3],
    #[serde(default = "default_architecture")]
    pub architecture_id: String,
    #[serde(default = "default_weights")]
    pub weights_id: String,
}

fn default_input_size() -> usize {
    224
}

fn default_context_length() -> usize {
    77
}

// Per-channel statistics published with the CLIP-family weights.
fn default_mean() -> [f32; 3] {
    [0.481_454_66, 0.457_827_5, 0.408_210_73]
}

fn default_std() -> [f32; 3] {
    [0.268_629_54, 0.261_302_58, 0.275_777_1]
}

fn default_architecture() -> String {
    "ViT-B-32".into()
}

fn default_weights() -> String {
    "laion2b_s34b_b79k".into()
}

/// Instantiates the backend described by `spec`.
pub fn build_backend(spec: &BackendSpec) -> Result<Arc<dyn EmbeddingBackend>, EmbedError> {
    match spec.kind {
        BackendKind::Synthetic => {
            let size = spec.input_size.unwrap_or(synthetic::DEFAULT_INPUT_SIZE);
            Ok(Arc::new(SyntheticBackend::with_input_size(size).named(&spec.name)))
        }
        BackendKind::Remote => {
            let url = spec
                .url
                .as_deref()
                .ok_or_else(|| EmbedError::Config(format!("backend `{}` needs a url", spec.name)))?;
            #[cfg(feature = "remote")]
            {
                Ok(Arc::new(remote::RemoteBackend::connect(url)?))
            }
            #[cfg(not(feature = "remote"))]
            {
                let _ = url;
                Err(EmbedError::Config("built without the `remote` feature".into()))
            }
        }
        BackendKind::Graph => {
            let paths = spec.graph_paths.as_ref().ok_or_else(|| {
                EmbedError::Config(format!("backend `{}` needs graph_paths", spec.name))
            })?;
            #[cfg(feature = "graph")]
            {
                Ok(Arc::new(graph::GraphBackend::load(&spec.name, paths)?))
            }
            #[cfg(not(feature = "graph"))]
            {
                let _ = paths;
                Err(EmbedError::Config("built without the `graph` feature".into()))
            }
        }
    }
}
