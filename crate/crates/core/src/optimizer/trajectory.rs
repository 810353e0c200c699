//! Per-iteration history of a tuning run.
//!
//! Records serialize one per line as
//! `{"iter":n,"loss":f,"sim_a":f,"sim_b":f|null,"p_a":f|null}`; snapshots
//! serialize as a JSON array of `{"iter":n,"phi":{...}}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::ccm::{CcmParams, PhiMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub loss: f64,
    pub sim_a: f64,
    pub sim_b: Option<f64>,
    pub p_a: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub iter: usize,
    pub phi: PhiMap,
}

impl SnapshotRecord {
    pub fn new(iter: usize, params: &CcmParams) -> Self {
        Self {
            iter,
            phi: params.off_diag.into(),
        }
    }

    pub fn params(&self, tau: f64) -> CcmParams {
        CcmParams {
            off_diag: self.phi.into(),
            tau,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<IterationRecord>,
    pub snapshots: Vec<SnapshotRecord>,
    /// Iterations whose processed thumbnail had samples outside `[0, 1]`.
    #[serde(default)]
    pub out_of_range_iterations: usize,
}

impl Trajectory {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn initial(&self) -> Option<&IterationRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Snapshot at or before `iter`; the latest one when `iter` is `None`.
    pub fn snapshot_at(&self, iter: Option<usize>) -> Option<&SnapshotRecord> {
        snapshot_at(&self.snapshots, iter)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            out.write_all(record_line(r).as_bytes())?;
        }
        Ok(())
    }

    pub fn snapshots_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshots).expect("snapshots serialize")
    }
}

/// Nearest snapshot at or before `iter`, assuming `snapshots` is sorted.
pub fn snapshot_at(snapshots: &[SnapshotRecord], iter: Option<usize>) -> Option<&SnapshotRecord> {
    match iter {
        None => snapshots.last(),
        Some(k) => snapshots.iter().rev().find(|s| s.iter <= k),
    }
}

/// One JSON-lines row, newline included.
pub fn record_line(r: &IterationRecord) -> String {
    let mut s = serde_json::to_string(r).expect("record serializes");
    s.push('\n');
    s
}

/// Parses JSON-lines records, ignoring blank lines and a trailing partial line.
pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Vec<IterationRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(e) if e.is_eof() => break,
            Err(e) => return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
        }
    }
    Ok(out)
}
