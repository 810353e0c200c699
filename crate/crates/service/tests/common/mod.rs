#![allow(dead_code)]

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use ccmtune_core::embedding::{BackendKind, BackendSpec, EmbedError, Embedding, EmbeddingBackend};
use ccmtune_core::image::{encode_display, RgbImage};
use ccmtune_core::{BackendDescriptor, SyntheticBackend};
use ccmtune_service::{BackendRegistry, Service, ServiceConfig};
use http_body_util::BodyExt;
use tower::ServiceExt;

pub const BOUNDARY: &str = "ccmtune-test-boundary";

/// Synthetic backend whose text embedding blocks until the gate opens.
pub struct Gated {
    inner: SyntheticBackend,
    open: Mutex<bool>,
    cv: Condvar,
}

impl Gated {
    pub fn new(input_size: usize) -> Arc<Self> {
        Arc::new(Self {
            inner: SyntheticBackend::with_input_size(input_size).named("gated"),
            open: Mutex::new(false),
            cv: Condvar::new(),
        })
    }

    pub fn open(&self) {
        *self.open.lock().unwrap() = true;
        self.cv.notify_all();
    }
}

impl EmbeddingBackend for Gated {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }
    fn embed_image(&self, img: &RgbImage) -> Result<Embedding, EmbedError> {
        self.inner.embed_image(img)
    }
    fn embed_text(&self, prompt: &str) -> Result<Embedding, EmbedError> {
        let mut open = self.open.lock().unwrap();
        while !*open {
            open = self.cv.wait(open).unwrap();
        }
        drop(open);
        self.inner.embed_text(prompt)
    }
    fn image_pullback(&self, img: &RgbImage, cot: &[f64]) -> Result<RgbImage, EmbedError> {
        self.inner.image_pullback(img, cot)
    }
}

pub fn spec(name: &str) -> BackendSpec {
    BackendSpec {
        name: name.into(),
        kind: BackendKind::Synthetic,
        graph_paths: None,
        url: None,
        input_size: Some(32),
    }
}

pub fn service_config(dir: &std::path::Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: dir.to_path_buf(),
        backends: vec![spec("synthetic")],
        ..ServiceConfig::default()
    }
}

pub fn synthetic_service(dir: &std::path::Path) -> Service {
    Service::start(&service_config(dir)).unwrap()
}

pub fn gated_service(dir: &std::path::Path, gate: Arc<Gated>, queue_limit: usize) -> Service {
    let cfg = ServiceConfig {
        queue_limit,
        ..service_config(dir)
    };
    let registry = BackendRegistry::new(vec![]).with_instance(spec("gated"), gate);
    Service::with_registry(&cfg, registry).unwrap()
}

pub fn scene(w: usize, h: usize) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let u = x as f64 / w as f64;
        let v = y as f64 / h as f64;
        [0.25 + 0.3 * u, 0.4 + 0.2 * v, 0.65 - 0.2 * u * v]
    })
}

pub fn png(img: &RgbImage) -> Vec<u8> {
    encode_display(img).unwrap()
}

pub fn config_json(iterations: usize) -> String {
    format!(
        r#"{{"objective": {{"kind": "single", "prompt": {{"template": "B", "keyword": "warm"}}}},
            "iterations": {iterations}, "snapshot_every": 50}}"#
    )
}

/// A multipart/form-data body from `(name, filename, bytes)` parts.
pub fn multipart(parts: &[(&str, Option<&str>, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, filename, bytes) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match filename {
            Some(f) => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\nContent-Type: application/octet-stream\r\n\r\n")
                    .as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes()),
        }
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub async fn send(router: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn get(router: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(router, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn get_json(router: &Router, uri: &str) -> (StatusCode, serde_json::Value) {
    let (s, b) = get(router, uri).await;
    (s, serde_json::from_slice(&b).unwrap_or(serde_json::Value::Null))
}

pub async fn post_multipart(router: &Router, uri: &str, parts: &[(&str, Option<&str>, &[u8])]) -> (StatusCode, Vec<u8>) {
    let req = Request::post(uri)
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(parts)))
        .unwrap();
    send(router, req).await
}

pub async fn submit(router: &Router, image: &[u8], config: &str) -> (StatusCode, serde_json::Value) {
    let (s, b) = post_multipart(
        router,
        "/v1/jobs",
        &[("image", Some("in.png"), image), ("config", None, config.as_bytes())],
    )
    .await;
    (s, serde_json::from_slice(&b).unwrap_or(serde_json::Value::Null))
}

/// Polls the job until `pred` holds on its view or `timeout` passes.
pub async fn wait_for(
    router: &Router,
    id: &str,
    timeout: Duration,
    pred: impl Fn(&serde_json::Value) -> bool,
) -> serde_json::Value {
    let start = Instant::now();
    loop {
        let (s, v) = get_json(router, &format!("/v1/jobs/{id}")).await;
        assert_eq!(s, StatusCode::OK);
        if pred(&v) {
            return v;
        }
        assert!(start.elapsed() < timeout, "timed out waiting on job {id}: {v}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

pub fn is_terminal(v: &serde_json::Value) -> bool {
    v["status"] == "done" || v["status"] == "failed"
}
