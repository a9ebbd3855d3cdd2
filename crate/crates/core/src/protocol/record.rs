use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpo::Hparams;
use crate::metalearner::Provenance;
use crate::predictor::CurvePoint;

/// Major version of the record log format.
pub const RECORD_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Prefix pass, errors on validation splits.
    MetaTrain,
    /// Full-stream pass, errors on test splits.
    MetaTest,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::MetaTrain => "meta_train",
            Phase::MetaTest => "meta_test",
        }
    }
}

/// Outcome of one task in one pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub phase: Phase,
    pub index: usize,
    pub task_id: String,
    pub strategy: serde_json::Value,
    pub hparams: Hparams,
    pub init_provenance: Provenance,
    /// Validation error in the meta-train pass, test error in the meta-test pass.
    pub error: f64,
    pub val_error: f64,
    pub flops: u64,
    pub learning_curve: Vec<CurvePoint>,
    pub seed: u64,
    pub wall_time: f64,
    pub domain: String,
    pub train_size: usize,
    pub avg_resolution: (u32, u32),
    /// Whether the task belongs to the evaluated part of the stream and
    /// therefore enters the averaged error.
    pub scored: bool,
    pub trials: usize,
}

impl RunRecord {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != RECORD_SCHEMA {
            return Err(Error::Schema { found: self.schema_version.to_string(), supported: RECORD_SCHEMA });
        }
        if !(0.0..=1.0).contains(&self.error) {
            return Err(Error::Corrupt(format!(
                "record for `{}` has error {} outside [0, 1]",
                self.task_id, self.error
            )));
        }
        Ok(())
    }

    /// The record with timing fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self { wall_time: 0.0, ..self.clone() }
    }
}

/// Stream-level result of a pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub schema_version: u32,
    pub phase: Phase,
    pub strategy: serde_json::Value,
    /// Mean error over scored records.
    pub error: f64,
    /// Sum of FLOPs over all records.
    pub cflop: u64,
    pub num_tasks: usize,
    pub num_scored: usize,
}

impl PhaseSummary {
    pub fn from_records(phase: Phase, strategy: serde_json::Value, records: &[RunRecord]) -> Result<Self> {
        let scored: Vec<f64> = records.iter().filter(|r| r.scored).map(|r| r.error).collect();
        if scored.is_empty() {
            return Err(Error::Invalid("no scored records to summarize".into()));
        }
        Ok(Self {
            schema_version: RECORD_SCHEMA,
            phase,
            strategy,
            error: scored.iter().sum::<f64>() / scored.len() as f64,
            cflop: records.iter().map(|r| r.flops).sum(),
            num_tasks: records.len(),
            num_scored: scored.len(),
        })
    }
}

/// Append-only line-delimited record log, flushed per record.
#[derive(Debug)]
pub struct RecordLog {
    path: PathBuf,
    file: File,
}

impl RecordLog {
    pub fn create(path: &Path) -> Result<Self> {
        Self::rewrite(path, &[])
    }

    /// Replaces the log with exactly `records`.
    pub fn rewrite(path: &Path, records: &[RunRecord]) -> Result<Self> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).expect("record serializes");
            buf.push(b'\n');
        }
        crate::codec::write_atomic(path, &buf)?;
        let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn append(&mut self, record: &RunRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Reads a record log, rejecting unknown schema versions.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::Corrupt(format!("{}:{}: {e}", path.display(), i + 1)))?;
        match v.get("schema_version").and_then(|s| s.as_u64()) {
            Some(s) if s == RECORD_SCHEMA as u64 => {}
            other => {
                return Err(Error::Schema {
                    found: other.map_or("missing".into(), |s| s.to_string()),
                    supported: RECORD_SCHEMA,
                })
            }
        }
        let r: RunRecord =
            serde_json::from_value(v).map_err(|e| Error::Corrupt(format!("{}:{}: {e}", path.display(), i + 1)))?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}
