//! JSON bodies of the remote embedding protocol.
//!
//! ```text
//! GET  /v1/info            -> BackendDescriptor
//! POST /v1/embed_image     ImagePayload            -> VectorResponse
//! POST /v1/embed_text      TextRequest             -> VectorResponse
//! POST /v1/pullback_image  PullbackRequest         -> ImagePayload
//! ```
//!
//! Images travel as base64 of little-endian `f32`, channel-major RGB.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::EmbedError;
use crate::image::RgbImage;

pub const INFO_PATH: &str = "/v1/info";
pub const EMBED_IMAGE_PATH: &str = "/v1/embed_image";
pub const EMBED_TEXT_PATH: &str = "/v1/embed_text";
pub const PULLBACK_IMAGE_PATH: &str = "/v1/pullback_image";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub width: usize,
    pub height: usize,
    pub data_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextRequest {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorResponse {
    pub dim: usize,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PullbackRequest {
    #[serde(flatten)]
    pub image: ImagePayload,
    pub cotangent: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl ImagePayload {
    pub fn encode(img: &RgbImage) -> Self {
        let mut bytes = Vec::with_capacity(4 * img.samples().len());
        for v in img.samples() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Self {
            width: img.width(),
            height: img.height(),
            data_b64: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<RgbImage, EmbedError> {
        let bytes = STANDARD
            .decode(&self.data_b64)
            .map_err(|e| EmbedError::Shape(format!("bad base64 image data: {e}")))?;
        let expected = 4 * 3 * self.width * self.height;
        if bytes.len() != expected {
            return Err(EmbedError::Shape(format!(
                "{}x{} image needs {expected} bytes, got {}",
                self.width,
                self.height,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        RgbImage::new(self.width, self.height, data).map_err(|e| EmbedError::Shape(e.to_string()))
    }
}

impl VectorResponse {
    pub fn new(vector: Vec<f64>) -> Self {
        Self {
            dim: vector.len(),
            vector,
        }
    }
}
