//! Serves any [`EmbeddingBackend`] over the remote embedding protocol.
//!
//! This is the server half of `ccmtune_core::embedding::remote`; it lets a
//! backend built into this binary stand in for an external sidecar.

use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ccmtune_core::embedding::wire::{
    self, ErrorBody, ImagePayload, PullbackRequest, TextRequest, VectorResponse,
};
use ccmtune_core::embedding::{EmbedError, EmbeddingBackend};
use ccmtune_core::BackendDescriptor;

type Shared = Arc<dyn EmbeddingBackend>;

struct WireError(EmbedError);

impl IntoResponse for WireError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            EmbedError::Shape(_) | EmbedError::Tokenize(_) => StatusCode::BAD_REQUEST,
            EmbedError::Unsupported(_) => StatusCode::NOT_IMPLEMENTED,
            EmbedError::BackendUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            EmbedError::InvalidOutput(_) | EmbedError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.0.to_string() })).into_response()
    }
}

async fn run<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, EmbedError> + Send + 'static,
) -> Result<T, WireError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| WireError(EmbedError::BackendUnavailable(e.to_string())))?
        .map_err(WireError)
}

async fn info(State(b): State<Shared>) -> Json<BackendDescriptor> {
    Json(b.descriptor())
}

async fn embed_image(State(b): State<Shared>, Json(req): Json<ImagePayload>) -> Result<Json<VectorResponse>, WireError> {
    let e = run(move || b.embed_image(&req.decode()?)).await?;
    Ok(Json(VectorResponse::new(e.into_vec())))
}

async fn embed_text(State(b): State<Shared>, Json(req): Json<TextRequest>) -> Result<Json<VectorResponse>, WireError> {
    let e = run(move || b.embed_text(&req.text)).await?;
    Ok(Json(VectorResponse::new(e.into_vec())))
}

async fn pullback(State(b): State<Shared>, Json(req): Json<PullbackRequest>) -> Result<Json<ImagePayload>, WireError> {
    let g = run(move || b.image_pullback(&req.image.decode()?, &req.cotangent)).await?;
    Ok(Json(ImagePayload::encode(&g)))
}

pub fn wire_router(backend: Shared) -> Router {
    Router::new()
        .route(wire::INFO_PATH, get(info))
        .route(wire::EMBED_IMAGE_PATH, post(embed_image))
        .route(wire::EMBED_TEXT_PATH, post(embed_text))
        .route(wire::PULLBACK_IMAGE_PATH, post(pullback))
        .layer(DefaultBodyLimit::max(64 * 1024 * 1024))
        .with_state(backend)
}
