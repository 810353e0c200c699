use std::fs::{File, OpenOptions};
use std::io::Write;
use std::ops::ControlFlow;
use std::sync::Arc;
use std::thread::JoinHandle;

use ccmtune_core::ccm::{self, CcmParams, MatrixFile};
use ccmtune_core::image::{encode_display, fit_within, read_image, RgbImage};
use ccmtune_core::optimizer::{
    record_line, tune_with_observer, IterationRecord, SnapshotRecord, TuneError, TuneObserver,
};

use crate::registry::BackendRegistry;
use crate::store::{
    write_atomic, JobRecord, JobStore, INPUT_FILE, INTERRUPTED, MATRIX_FILE, OUTPUT_FILE, PREVIEW_FILE,
    SNAPSHOTS_FILE, TRAJECTORY_FILE,
};

/// Longest side of preview images.
pub const PREVIEW_MAX_SIDE: usize = 768;

/// PNG of `params` applied to a display-sized copy of `input`.
pub fn preview_png(input: &RgbImage, params: &CcmParams) -> Result<Vec<u8>, String> {
    let small = fit_within(input, PREVIEW_MAX_SIDE);
    encode_display(&ccm::apply(&params.materialize(), &small)).map_err(|e| e.to_string())
}

/// Streams records and snapshots to the job directory as they arrive.
struct JobObserver<'a> {
    store: &'a JobStore,
    id: &'a str,
    trajectory: File,
    snapshots: Vec<SnapshotRecord>,
    io_error: Option<std::io::Error>,
}

impl TuneObserver for JobObserver<'_> {
    fn on_record(&mut self, record: &IterationRecord) -> ControlFlow<()> {
        if let Err(e) = self.trajectory.write_all(record_line(record).as_bytes()) {
            self.io_error = Some(e);
            return ControlFlow::Break(());
        }
        self.store.set_progress(self.id, record.iter);
        if self.store.is_closed() {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }

    fn on_snapshot(&mut self, snapshot: &SnapshotRecord) {
        self.snapshots.push(snapshot.clone());
        let json = serde_json::to_vec_pretty(&self.snapshots).expect("snapshots serialize");
        if let Err(e) = write_atomic(&self.store.artifact(self.id, SNAPSHOTS_FILE), &json) {
            self.io_error.get_or_insert(e);
        }
    }
}

fn run_job(store: &JobStore, registry: &BackendRegistry, rec: &JobRecord) -> Result<(), String> {
    let input = read_image(store.artifact(&rec.id, INPUT_FILE)).map_err(|e| e.to_string())?;
    let backend = registry.get(&rec.backend).map_err(|e| e.to_string())?;
    let trajectory = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(store.artifact(&rec.id, TRAJECTORY_FILE))
        .map_err(|e| e.to_string())?;
    let mut observer = JobObserver {
        store,
        id: &rec.id,
        trajectory,
        snapshots: Vec::new(),
        io_error: None,
    };
    let outcome = tune_with_observer(&input, &rec.config, backend.as_ref(), &mut observer);
    if let Some(e) = observer.io_error {
        return Err(format!("writing artifacts: {e}"));
    }
    let result = match outcome {
        Ok(r) => r,
        Err(f) if matches!(f.error, TuneError::Cancelled) => return Err(INTERRUPTED.into()),
        Err(f) => return Err(f.error.to_string()),
    };

    let matrix = MatrixFile::from_params(&result.final_params);
    let output = encode_display(&ccm::apply(&result.final_matrix, &input)).map_err(|e| e.to_string())?;
    let preview = preview_png(&input, &result.final_params)?;
    let write = |name: &str, bytes: &[u8]| write_atomic(&store.artifact(&rec.id, name), bytes).map_err(|e| e.to_string());
    write(OUTPUT_FILE, &output)?;
    write(PREVIEW_FILE, &preview)?;
    // Written last: a parseable matrix.json marks a complete job.
    write(MATRIX_FILE, matrix.to_json().as_bytes())?;
    Ok(())
}

/// Starts `n` worker threads that drain the store's queue until it closes.
pub fn spawn_workers(n: usize, store: Arc<JobStore>, registry: Arc<BackendRegistry>) -> Vec<JoinHandle<()>> {
    (0..n)
        .map(|i| {
            let store = store.clone();
            let registry = registry.clone();
            std::thread::Builder::new()
                .name(format!("ccmtune-worker-{i}"))
                .spawn(move || loop {
                    let rec = match store.claim() {
                        Ok(Some(rec)) => rec,
                        Ok(None) => break,
                        Err(e) => {
                            tracing::error!("claiming a job failed: {e}");
                            std::thread::sleep(std::time::Duration::from_secs(1));
                            continue;
                        }
                    };
                    tracing::info!(job = %rec.id, "running");
                    let status = match run_job(&store, &registry, &rec) {
                        Ok(()) => store.finish(&rec.id),
                        Err(msg) => {
                            tracing::warn!(job = %rec.id, "failed: {msg}");
                            store.fail(&rec.id, msg)
                        }
                    };
                    if let Err(e) = status {
                        tracing::error!(job = %rec.id, "could not record job status: {e}");
                    }
                })
                .expect("spawn worker thread")
        })
        .collect()
}
