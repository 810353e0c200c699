//! On-disk job table with a FIFO run queue.
//!
//! Every job lives in `<data_dir>/jobs/<id>/`. `job.json` is the record and
//! is replaced atomically on every status change, so a crash leaves either
//! the old or the new record, never a torn one.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};

use ccmtune_core::optimizer::{read_jsonl, TuneConfig};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const JOB_FILE: &str = "job.json";
pub const CONFIG_FILE: &str = "config.json";
pub const INPUT_FILE: &str = "input.png";
pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const SNAPSHOTS_FILE: &str = "snapshots.json";
pub const MATRIX_FILE: &str = "matrix.json";
pub const PREVIEW_FILE: &str = "preview.png";
pub const OUTPUT_FILE: &str = "output.png";

pub const INTERRUPTED: &str = "interrupted";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }

    fn can_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running)
                | (JobStatus::Running, JobStatus::Done)
                | (JobStatus::Running, JobStatus::Failed)
                | (JobStatus::Queued, JobStatus::Failed)
        )
    }
}

/// The persisted job record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub status: JobStatus,
    pub config: TuneConfig,
    /// Backend the job runs on, resolved at submission.
    pub backend: String,
    pub submitted_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub width: usize,
    pub height: usize,
    /// Last iteration recorded, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_iteration: Option<usize>,
    /// Submission sequence number; breaks ties between equal timestamps.
    pub seq: u64,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("queue is full ({0} jobs outstanding)")]
    QueueFull(usize),
    #[error("unknown job `{0}`")]
    NotFound(String),
    #[error("job `{id}` cannot go from {from:?} to {to:?}")]
    Transition {
        id: String,
        from: JobStatus,
        to: JobStatus,
    },
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt job record {path}: {source}")]
    Corrupt {
        path: PathBuf,
        source: serde_json::Error,
    },
}

struct Table {
    jobs: HashMap<String, JobRecord>,
    queue: VecDeque<String>,
    running: usize,
    next_seq: u64,
}

pub struct JobStore {
    root: PathBuf,
    queue_limit: usize,
    table: Mutex<Table>,
    ready: Condvar,
    closed: AtomicBool,
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn last_recorded_iteration(path: &Path) -> Option<usize> {
    let file = fs::File::open(path).ok()?;
    let records = read_jsonl(std::io::BufReader::new(file)).ok()?;
    records.last().map(|r| r.iter)
}

impl JobStore {
    /// Opens (or creates) the store under `data_dir` and recovers its jobs.
    ///
    /// Jobs that were running when the previous process died are marked
    /// failed with error `"interrupted"`; queued jobs go back on the queue in
    /// submission order.
    pub fn open(data_dir: &Path, queue_limit: usize) -> Result<Self, StoreError> {
        let root = data_dir.join("jobs");
        fs::create_dir_all(&root)?;
        let mut jobs = HashMap::new();
        for entry in fs::read_dir(&root)? {
            let dir = entry?.path();
            let path = dir.join(JOB_FILE);
            if !path.is_file() {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            let mut rec: JobRecord =
                serde_json::from_str(&text).map_err(|source| StoreError::Corrupt { path, source })?;
            rec.last_iteration = last_recorded_iteration(&dir.join(TRAJECTORY_FILE));
            jobs.insert(rec.id.clone(), rec);
        }

        let now = Utc::now();
        let mut queued: Vec<&JobRecord> = Vec::new();
        let mut interrupted = Vec::new();
        for rec in jobs.values() {
            match rec.status {
                JobStatus::Running => interrupted.push(rec.id.clone()),
                JobStatus::Queued => queued.push(rec),
                _ => {}
            }
        }
        queued.sort_by_key(|r| (r.submitted_at, r.seq));
        let queue: VecDeque<String> = queued.iter().map(|r| r.id.clone()).collect();
        let next_seq = jobs.values().map(|r| r.seq + 1).max().unwrap_or(0);

        let store = Self {
            root,
            queue_limit,
            table: Mutex::new(Table {
                jobs,
                queue,
                running: 0,
                next_seq,
            }),
            ready: Condvar::new(),
            closed: AtomicBool::new(false),
        };
        {
            let mut t = store.table.lock().unwrap();
            for id in interrupted {
                let rec = t.jobs.get_mut(&id).expect("listed above");
                rec.status = JobStatus::Failed;
                rec.error = Some(INTERRUPTED.to_string());
                rec.updated_at = now;
                store.persist(rec)?;
            }
        }
        Ok(store)
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn artifact(&self, id: &str, name: &str) -> PathBuf {
        self.job_dir(id).join(name)
    }

    fn persist(&self, rec: &JobRecord) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(rec).expect("job record serializes");
        write_atomic(&self.artifact(&rec.id, JOB_FILE), &bytes)?;
        Ok(())
    }

    /// Persists a new queued job. `input_png` is the decoded upload re-encoded
    /// losslessly.
    pub fn submit(
        &self,
        config: TuneConfig,
        backend: String,
        input_png: &[u8],
        width: usize,
        height: usize,
    ) -> Result<JobRecord, StoreError> {
        let mut t = self.table.lock().unwrap();
        let outstanding = t.queue.len() + t.running;
        if outstanding >= self.queue_limit {
            return Err(StoreError::QueueFull(outstanding));
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let now = Utc::now();
        let rec = JobRecord {
            id: id.clone(),
            status: JobStatus::Queued,
            config,
            backend,
            submitted_at: now,
            updated_at: now,
            error: None,
            width,
            height,
            last_iteration: None,
            seq: t.next_seq,
        };
        let dir = self.job_dir(&id);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(INPUT_FILE), input_png)?;
        let mut config_json = serde_json::to_vec_pretty(&rec.config).expect("config serializes");
        config_json.push(b'\n');
        fs::write(dir.join(CONFIG_FILE), config_json)?;
        self.persist(&rec)?;

        t.next_seq += 1;
        t.jobs.insert(id.clone(), rec.clone());
        t.queue.push_back(id);
        drop(t);
        self.ready.notify_one();
        Ok(rec)
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        self.table.lock().unwrap().jobs.get(id).cloned()
    }

    /// Jobs newest first, with the total count.
    pub fn list(&self, limit: usize, offset: usize) -> (Vec<JobRecord>, usize) {
        let t = self.table.lock().unwrap();
        let mut all: Vec<&JobRecord> = t.jobs.values().collect();
        all.sort_by(|a, b| (b.submitted_at, b.seq).cmp(&(a.submitted_at, a.seq)));
        let total = all.len();
        (all.into_iter().skip(offset).take(limit).cloned().collect(), total)
    }

    /// Number of queued plus running jobs.
    pub fn outstanding(&self) -> usize {
        let t = self.table.lock().unwrap();
        t.queue.len() + t.running
    }

    /// Takes the oldest queued job and marks it running, without blocking.
    pub fn try_claim(&self) -> Result<Option<JobRecord>, StoreError> {
        let mut t = self.table.lock().unwrap();
        self.claim_locked(&mut t)
    }

    fn claim_locked(&self, t: &mut Table) -> Result<Option<JobRecord>, StoreError> {
        while let Some(id) = t.queue.pop_front() {
            let Some(rec) = t.jobs.get_mut(&id) else { continue };
            if rec.status != JobStatus::Queued {
                continue;
            }
            rec.status = JobStatus::Running;
            rec.updated_at = Utc::now();
            let rec = rec.clone();
            self.persist(&rec)?;
            t.running += 1;
            return Ok(Some(rec));
        }
        Ok(None)
    }

    /// Blocks until a job is available or the store is closed.
    pub fn claim(&self) -> Result<Option<JobRecord>, StoreError> {
        let mut t = self.table.lock().unwrap();
        loop {
            if self.closed.load(Ordering::SeqCst) {
                return Ok(None);
            }
            if let Some(rec) = self.claim_locked(&mut t)? {
                return Ok(Some(rec));
            }
            t = self.ready.wait(t).unwrap();
        }
    }

    fn transition(&self, id: &str, to: JobStatus, error: Option<String>) -> Result<JobRecord, StoreError> {
        let mut t = self.table.lock().unwrap();
        let rec = t.jobs.get_mut(id).ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        if !rec.status.can_become(to) {
            return Err(StoreError::Transition {
                id: id.to_string(),
                from: rec.status,
                to,
            });
        }
        let was_running = rec.status == JobStatus::Running;
        rec.status = to;
        rec.error = error;
        rec.updated_at = Utc::now();
        let rec = rec.clone();
        self.persist(&rec)?;
        if was_running {
            t.running -= 1;
        }
        Ok(rec)
    }

    pub fn finish(&self, id: &str) -> Result<JobRecord, StoreError> {
        self.transition(id, JobStatus::Done, None)
    }

    pub fn fail(&self, id: &str, error: impl Into<String>) -> Result<JobRecord, StoreError> {
        self.transition(id, JobStatus::Failed, Some(error.into()))
    }

    /// Records progress in memory; it is recomputed from the trajectory on restart.
    pub fn set_progress(&self, id: &str, iteration: usize) {
        if let Some(rec) = self.table.lock().unwrap().jobs.get_mut(id) {
            rec.last_iteration = Some(iteration);
        }
    }

    /// Stops handing out jobs and wakes idle workers.
    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        let _guard = self.table.lock().unwrap();
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Deletes finished jobs: failed ones, and done ones too when
    /// `include_done`. Returns the removed ids.
    pub fn purge(&self, include_done: bool) -> Result<Vec<String>, StoreError> {
        let mut t = self.table.lock().unwrap();
        let doomed: Vec<String> = t
            .jobs
            .values()
            .filter(|r| r.status == JobStatus::Failed || (include_done && r.status == JobStatus::Done))
            .map(|r| r.id.clone())
            .collect();
        for id in &doomed {
            fs::remove_dir_all(self.job_dir(id))?;
            t.jobs.remove(id);
        }
        Ok(doomed)
    }
}
