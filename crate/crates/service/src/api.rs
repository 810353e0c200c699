use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ccmtune_core::ccm::{self, parse_matrix_json, CcmError};
use ccmtune_core::image::{decode_image, encode_display, read_image};
use ccmtune_core::optimizer::{snapshot_at, IterationRecord, SnapshotRecord, TuneConfig};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::registry::BackendRegistry;
use crate::store::{
    JobRecord, JobStatus, JobStore, StoreError, INPUT_FILE, MATRIX_FILE, OUTPUT_FILE, PREVIEW_FILE,
    SNAPSHOTS_FILE, TRAJECTORY_FILE,
};
use crate::worker::preview_png;

/// Upper bound on upload size.
pub const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;

/// Minimum spacing of server-sent progress events.
pub const EVENT_INTERVAL: Duration = Duration::from_millis(100);

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<JobStore>,
    pub registry: Arc<BackendRegistry>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown job `{id}`"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::QueueFull(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
            StoreError::NotFound(id) => ApiError::not_found(&id),
            other => ApiError::internal(other),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Progress {
    pub iteration: usize,
    pub total: usize,
}

/// The JSON view of a job.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub status: JobStatus,
    pub config: TuneConfig,
    pub backend: String,
    pub submitted_at: chrono::DateTime<chrono::Utc>,
    pub updated_at: chrono::DateTime<chrono::Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub width: usize,
    pub height: usize,
    pub progress: Progress,
    /// Artifact name to URL, for the artifacts that exist.
    pub artifacts: std::collections::BTreeMap<String, String>,
}

fn view(store: &JobStore, rec: JobRecord) -> JobView {
    let mut artifacts = std::collections::BTreeMap::new();
    let base = format!("/v1/jobs/{}", rec.id);
    for (name, file) in [
        ("input", INPUT_FILE),
        ("trajectory", TRAJECTORY_FILE),
        ("snapshots", SNAPSHOTS_FILE),
        ("matrix", MATRIX_FILE),
        ("preview", PREVIEW_FILE),
        ("output", OUTPUT_FILE),
    ] {
        if store.artifact(&rec.id, file).is_file() {
            artifacts.insert(name.to_string(), format!("{base}/{name}"));
        }
    }
    JobView {
        progress: Progress {
            iteration: rec.last_iteration.unwrap_or(0),
            total: rec.config.iterations,
        },
        artifacts,
        id: rec.id,
        status: rec.status,
        config: rec.config,
        backend: rec.backend,
        submitted_at: rec.submitted_at,
        updated_at: rec.updated_at,
        error: rec.error,
        width: rec.width,
        height: rec.height,
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/backends", get(backends))
        .route("/v1/jobs", post(submit).get(list))
        .route("/v1/jobs/:id", get(get_job))
        .route("/v1/jobs/:id/trajectory", get(trajectory))
        .route("/v1/jobs/:id/snapshots", get(snapshots))
        .route("/v1/jobs/:id/preview", get(preview))
        .route("/v1/jobs/:id/matrix", get(matrix))
        .route("/v1/jobs/:id/output", get(output))
        .route("/v1/jobs/:id/input", get(input))
        .route("/v1/jobs/:id/events", get(events))
        .route("/v1/apply", post(apply))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn backends(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "backends": st.registry.entries() }))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

/// Collects named multipart fields.
async fn read_fields(mut mp: Multipart, names: &[&str]) -> ApiResult<Vec<Option<Bytes>>> {
    let mut out = vec![None; names.len()];
    while let Some(field) = mp
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("bad multipart body: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("bad multipart field `{name}`: {e}")))?;
        if let Some(i) = names.iter().position(|n| *n == name) {
            out[i] = Some(data);
        }
    }
    Ok(out)
}

fn required(field: Option<Bytes>, name: &str) -> ApiResult<Bytes> {
    field.ok_or_else(|| ApiError::bad_request(format!("missing multipart field `{name}`")).field(name))
}

async fn submit(State(st): State<AppState>, mp: Multipart) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let mut fields = read_fields(mp, &["image", "config"]).await?.into_iter();
    let image = required(fields.next().flatten(), "image")?;
    let config = required(fields.next().flatten(), "config")?;

    let config: TuneConfig = serde_json::from_slice(&config)
        .map_err(|e| ApiError::bad_request(format!("invalid config: {e}")).field("config"))?;
    config
        .validate()
        .map_err(|e| ApiError::bad_request(e.to_string()).field(e.field.clone()))?;
    let backend = st
        .registry
        .resolve_name(config.backend.as_deref())
        .ok_or_else(|| {
            ApiError::bad_request(format!("unknown backend `{}`", config.backend.as_deref().unwrap_or("")))
                .field("backend")
        })?
        .to_string();

    let rec = blocking(move || {
        let img = decode_image(&image).map_err(|e| ApiError::bad_request(e.to_string()).field("image"))?;
        let png = encode_display(&img).map_err(ApiError::internal)?;
        Ok(st.store.submit(config, backend, &png, img.width(), img.height())?)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": rec.id }))))
}

#[derive(Deserialize)]
struct Page {
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn list(State(st): State<AppState>, Query(p): Query<Page>) -> Json<serde_json::Value> {
    let (jobs, total) = st.store.list(p.limit.unwrap_or(50), p.offset.unwrap_or(0));
    let jobs: Vec<JobView> = jobs.into_iter().map(|r| view(&st.store, r)).collect();
    Json(json!({ "jobs": jobs, "total": total }))
}

fn lookup(st: &AppState, id: &str) -> ApiResult<JobRecord> {
    st.store.get(id).ok_or_else(|| ApiError::not_found(id))
}

async fn get_job(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobView>> {
    let rec = lookup(&st, &id)?;
    Ok(Json(view(&st.store, rec)))
}

fn file_response(bytes: Vec<u8>, content_type: &'static str) -> Response {
    ([(header::CONTENT_TYPE, content_type)], bytes).into_response()
}

/// Complete lines of the trajectory file; a line still being written is left out.
fn complete_lines(mut bytes: Vec<u8>) -> Vec<u8> {
    let end = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    bytes.truncate(end);
    bytes
}

async fn trajectory(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    lookup(&st, &id)?;
    let bytes = match tokio::fs::read(st.store.artifact(&id, TRAJECTORY_FILE)).await {
        Ok(b) => complete_lines(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(ApiError::internal(e)),
    };
    Ok(file_response(bytes, "application/x-ndjson"))
}

async fn artifact(st: &AppState, id: &str, file: &str, content_type: &'static str) -> ApiResult<Response> {
    let rec = lookup(st, id)?;
    match tokio::fs::read(st.store.artifact(id, file)).await {
        Ok(b) => Ok(file_response(b, content_type)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let why = match rec.status {
                JobStatus::Failed => format!("job failed: {}", rec.error.unwrap_or_default()),
                s => format!("job is {s:?}; `{file}` is not available yet").to_lowercase(),
            };
            Err(ApiError::new(StatusCode::CONFLICT, why))
        }
        Err(e) => Err(ApiError::internal(e)),
    }
}

async fn snapshots(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    artifact(&st, &id, SNAPSHOTS_FILE, "application/json").await
}

async fn matrix(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    artifact(&st, &id, MATRIX_FILE, "application/json").await
}

async fn output(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    artifact(&st, &id, OUTPUT_FILE, "image/png").await
}

async fn input(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    artifact(&st, &id, INPUT_FILE, "image/png").await
}

#[derive(Deserialize)]
struct PreviewQuery {
    iter: Option<usize>,
}

async fn preview(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Response> {
    let rec = lookup(&st, &id)?;
    let png = blocking(move || {
        let no_snapshot = || ApiError::new(StatusCode::CONFLICT, "no snapshot recorded yet");
        let text = match std::fs::read(st.store.artifact(&id, SNAPSHOTS_FILE)) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(no_snapshot()),
            Err(e) => return Err(ApiError::internal(e)),
        };
        let snaps: Vec<SnapshotRecord> = serde_json::from_slice(&text).map_err(ApiError::internal)?;
        let snap = snapshot_at(&snaps, q.iter).ok_or_else(no_snapshot)?;
        let input = read_image(st.store.artifact(&id, INPUT_FILE)).map_err(ApiError::internal)?;
        preview_png(&input, &snap.params(rec.config.tau)).map_err(ApiError::internal)
    })
    .await?;
    Ok(file_response(png, "image/png"))
}

async fn apply(mp: Multipart) -> ApiResult<Response> {
    let mut fields = read_fields(mp, &["image", "matrix"]).await?.into_iter();
    let image = required(fields.next().flatten(), "image")?;
    let matrix = required(fields.next().flatten(), "matrix")?;
    let png = blocking(move || {
        let text = std::str::from_utf8(&matrix)
            .map_err(|_| ApiError::bad_request("matrix is not UTF-8").field("matrix"))?;
        let m = parse_matrix_json(text).map_err(|e| match e {
            CcmError::RowSum { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()).field("matrix"),
            other => ApiError::bad_request(other.to_string()).field("matrix"),
        })?;
        let img = decode_image(&image).map_err(|e| ApiError::bad_request(e.to_string()).field("image"))?;
        encode_display(&ccm::apply(&m, &img)).map_err(ApiError::internal)
    })
    .await?;
    Ok(file_response(png, "image/png"))
}

struct EventCursor {
    st: AppState,
    id: String,
    offset: usize,
    first: bool,
    finished: bool,
}

/// Batches of new trajectory records, at most one event per
/// [`EVENT_INTERVAL`], then a final `status` event once the job ends.
fn event_stream(cursor: EventCursor) -> impl Stream<Item = Result<Event, Infallible>> {
    futures::stream::unfold(cursor, |mut c| async move {
        if c.finished {
            return None;
        }
        loop {
            if !c.first {
                tokio::time::sleep(EVENT_INTERVAL).await;
            }
            c.first = false;
            let Some(rec) = c.st.store.get(&c.id) else { return None };
            let bytes = tokio::fs::read(c.st.store.artifact(&c.id, TRAJECTORY_FILE))
                .await
                .map(complete_lines)
                .unwrap_or_default();
            if bytes.len() > c.offset {
                let records: Vec<IterationRecord> = bytes[c.offset..]
                    .split(|&b| b == b'\n')
                    .filter(|l| !l.is_empty())
                    .filter_map(|l| serde_json::from_slice(l).ok())
                    .collect();
                c.offset = bytes.len();
                let event = Event::default()
                    .event("records")
                    .json_data(&records)
                    .expect("records serialize");
                return Some((Ok(event), c));
            }
            if rec.status.is_terminal() {
                c.finished = true;
                let event = Event::default()
                    .event("status")
                    .json_data(view(&c.st.store, rec))
                    .expect("job view serializes");
                return Some((Ok(event), c));
            }
        }
    })
}

async fn events(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    lookup(&st, &id)?;
    let cursor = EventCursor {
        st,
        id,
        offset: 0,
        first: true,
        finished: false,
    };
    Ok(Sse::new(event_stream(cursor)).keep_alive(KeepAlive::default()))
}
