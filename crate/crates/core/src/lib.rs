//! Prompt-driven tuning of a white-point-preserving 3x3 color correction
//! matrix against a vision-language embedding model.
//!
//! The pipeline: decode an image ([`image`]), parameterize a feasible matrix
//! ([`ccm`]), embed the transformed image and the prompts ([`embedding`]),
//! score them ([`objective`]), and descend ([`optimizer`]). [`metrics`]
//! holds the colorfulness statistic and the vibrant/dull experiment.

pub mod ccm;
pub mod embedding;
pub mod image;
pub mod metrics;
pub mod objective;
pub mod optimizer;
pub mod par;

pub use ccm::{CcmMatrix, CcmParams};
pub use embedding::{BackendDescriptor, EmbedError, Embedding, EmbeddingBackend, SyntheticBackend};
pub use image::RgbImage;
pub use optimizer::{tune, TuneConfig, TuneError, TuneResult};
