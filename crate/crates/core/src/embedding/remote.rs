//! Client for an embedding sidecar speaking the [`wire`](super::wire) protocol.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, ImagePayload, PullbackRequest, TextRequest, VectorResponse};
use super::{check_input_shape, BackendDescriptor, EmbedError, Embedding, EmbeddingBackend};
use crate::image::RgbImage;

pub struct RemoteBackend {
    base: String,
    client: Client,
    info: BackendDescriptor,
    text_cache: Mutex<HashMap<String, Embedding>>,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("base", &self.base)
            .field("info", &self.info)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    /// Connects and fetches the sidecar's descriptor.
    pub fn connect(base_url: &str) -> Result<Self, EmbedError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        let base = base_url.trim_end_matches('/').to_string();
        let resp = client
            .get(format!("{base}{}", wire::INFO_PATH))
            .send()
            .map_err(unavailable)?;
        let info: BackendDescriptor = read_json(resp)?;
        Ok(Self {
            base,
            client,
            info,
            text_cache: Mutex::new(HashMap::new()),
        })
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, EmbedError> {
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(unavailable)?;
        read_json(resp)
    }

    fn vector(&self, resp: VectorResponse) -> Result<Embedding, EmbedError> {
        if resp.vector.len() != resp.dim || resp.dim != self.info.embed_dim {
            return Err(EmbedError::InvalidOutput(format!(
                "expected {} components, got dim={} len={}",
                self.info.embed_dim,
                resp.dim,
                resp.vector.len()
            )));
        }
        Embedding::new(resp.vector)
    }
}

fn unavailable(e: reqwest::Error) -> EmbedError {
    EmbedError::BackendUnavailable(e.to_string())
}

fn read_json<R: DeserializeOwned>(resp: Response) -> Result<R, EmbedError> {
    let status = resp.status();
    if status.is_success() {
        return resp
            .json()
            .map_err(|e| EmbedError::InvalidOutput(format!("bad response body: {e}")));
    }
    let message = resp
        .json::<wire::ErrorBody>()
        .map(|b| b.error)
        .unwrap_or_else(|_| status.to_string());
    Err(match status {
        StatusCode::BAD_REQUEST if message.to_lowercase().contains("token") => {
            EmbedError::Tokenize(message)
        }
        StatusCode::BAD_REQUEST => EmbedError::Shape(message),
        StatusCode::NOT_IMPLEMENTED => EmbedError::Unsupported(message),
        _ => EmbedError::BackendUnavailable(format!("{status}: {message}")),
    })
}

impl EmbeddingBackend for RemoteBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.info.clone()
    }

    fn embed_image(&self, img: &RgbImage) -> Result<Embedding, EmbedError> {
        check_input_shape(img, self.info.input_size)?;
        let resp: VectorResponse = self.post(wire::EMBED_IMAGE_PATH, &ImagePayload::encode(img))?;
        self.vector(resp)
    }

    fn embed_text(&self, prompt: &str) -> Result<Embedding, EmbedError> {
        if let Some(e) = self.text_cache.lock().unwrap().get(prompt) {
            return Ok(e.clone());
        }
        let resp: VectorResponse = self.post(
            wire::EMBED_TEXT_PATH,
            &TextRequest {
                text: prompt.to_string(),
            },
        )?;
        let e = self.vector(resp)?;
        self.text_cache
            .lock()
            .unwrap()
            .insert(prompt.to_string(), e.clone());
        Ok(e)
    }

    fn image_pullback(&self, img: &RgbImage, cotangent: &[f64]) -> Result<RgbImage, EmbedError> {
        if !self.info.supports_pullback {
            return Err(EmbedError::Unsupported(format!(
                "sidecar `{}` does not advertise pullbacks",
                self.info.name
            )));
        }
        check_input_shape(img, self.info.input_size)?;
        let req = PullbackRequest {
            image: ImagePayload::encode(img),
            cotangent: cotangent.to_vec(),
        };
        let resp: ImagePayload = self.post(wire::PULLBACK_IMAGE_PATH, &req)?;
        let grad = resp.decode()?;
        if !grad.same_shape(img) {
            return Err(EmbedError::InvalidOutput(format!(
                "pullback is {}x{}, expected {}x{}",
                grad.width(),
                grad.height(),
                img.width(),
                img.height()
            )));
        }
        Ok(grad)
    }
}
