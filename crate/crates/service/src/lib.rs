//! HTTP job service for color correction matrix tuning.
//!
//! Jobs are submitted over REST, persisted under a data directory, and run
//! on a fixed pool of worker threads. See [`api::router`] for the endpoints.

pub mod api;
pub mod config;
pub mod registry;
pub mod store;
pub mod wire;
pub mod worker;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::Router;
use thiserror::Error;
use tower_http::services::ServeDir;

pub use api::{AppState, JobView};
pub use config::{ConfigFileError, ServiceConfig};
pub use registry::BackendRegistry;
pub use store::{JobRecord, JobStatus, JobStore, StoreError};
pub use wire::wire_router;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A running job service: store, registry and worker threads.
pub struct Service {
    state: AppState,
    workers: Vec<JoinHandle<()>>,
    ui_dir: Option<PathBuf>,
}

impl Service {
    pub fn start(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        Self::with_registry(cfg, BackendRegistry::new(cfg.backends.clone()))
    }

    pub fn with_registry(cfg: &ServiceConfig, registry: BackendRegistry) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let store = Arc::new(JobStore::open(&cfg.data_dir, cfg.queue_limit)?);
        let registry = Arc::new(registry);
        let workers = worker::spawn_workers(cfg.workers, store.clone(), registry.clone());
        Ok(Self {
            state: AppState { store, registry },
            workers,
            ui_dir: cfg.ui_dir.clone(),
        })
    }

    pub fn store(&self) -> &Arc<JobStore> {
        &self.state.store
    }

    pub fn router(&self) -> Router {
        let api = api::router(self.state.clone());
        match &self.ui_dir {
            Some(dir) => api.nest_service("/ui", ServeDir::new(dir)),
            None => api,
        }
    }

    /// Stops workers after their current iteration. Jobs cut short are
    /// marked failed as interrupted.
    pub fn shutdown(self) {
        self.state.store.close();
        for w in self.workers {
            let _ = w.join();
        }
    }
}

/// Serves `router` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    router: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(shutdown)
        .await
}
