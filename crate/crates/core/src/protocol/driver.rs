use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::codec::{sha256_hex, write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::metalearner::MetaLearner;
use crate::stream::Stream;

use super::record::{Phase, PhaseSummary, RecordLog, RunRecord, RECORD_SCHEMA};
use super::view::CausalView;

/// Where a pass persists its progress, and an optional early stop.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub log: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Stop after this many completed tasks in the pass.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PhaseResult {
    pub phase: Phase,
    pub records: Vec<RunRecord>,
    /// Present once every task of the pass is complete.
    pub summary: Option<PhaseSummary>,
}

impl PhaseResult {
    pub fn is_complete(&self) -> bool {
        self.summary.is_some()
    }
}

fn fingerprint(stream: &Stream) -> String {
    let mut s = format!("{}\n", stream.boundary());
    for t in stream.tasks() {
        s.push_str(&t.id);
        s.push('\n');
    }
    sha256_hex(s.as_bytes())
}

fn phase_len(stream: &Stream, phase: Phase) -> usize {
    match phase {
        Phase::MetaTrain => stream.boundary(),
        Phase::MetaTest => stream.len(),
    }
}

/// Prefix pass: every meta-train task, scored on its validation split.
pub fn run_meta_train(stream: &Stream, learner: &mut dyn MetaLearner, options: &RunOptions) -> Result<PhaseResult> {
    learner.reset();
    drive(stream, learner, Phase::MetaTrain, Vec::new(), options)
}

/// A fresh pass from the initial state over the whole stream; every task is
/// scored on its test split and the meta-test suffix is averaged.
pub fn run_meta_test(stream: &Stream, learner: &mut dyn MetaLearner, options: &RunOptions) -> Result<PhaseResult> {
    if stream.boundary() >= stream.len() {
        return Err(Error::InvalidStream("the stream has no meta-test tasks".into()));
    }
    learner.reset();
    drive(stream, learner, Phase::MetaTest, Vec::new(), options)
}

/// Continues a pass from its checkpoint. The record log, if any, is
/// rewritten to match the checkpoint before new records are appended.
pub fn resume(
    stream: &Stream,
    learner: &mut dyn MetaLearner,
    checkpoint: &Path,
    options: &RunOptions,
) -> Result<PhaseResult> {
    let cp = Checkpoint::load(checkpoint)?;
    if cp.fingerprint != fingerprint(stream) {
        return Err(Error::Corrupt(format!("checkpoint {} belongs to a different stream", checkpoint.display())));
    }
    learner.restore(&cp.learner)?;
    drive(stream, learner, cp.phase, cp.records, options)
}

fn drive(
    stream: &Stream,
    learner: &mut dyn MetaLearner,
    phase: Phase,
    mut records: Vec<RunRecord>,
    options: &RunOptions,
) -> Result<PhaseResult> {
    if stream.boundary() == 0 {
        return Err(Error::InvalidStream("the meta-train stream must be nonempty".into()));
    }
    let end = phase_len(stream, phase);
    for (i, r) in records.iter().enumerate() {
        if r.index != i || r.phase != phase || r.task_id != stream.tasks()[i].id {
            return Err(Error::Corrupt(format!("record {i} does not match the stream position")));
        }
    }
    let mut log = match &options.log {
        Some(p) => Some(RecordLog::rewrite(p, &records)?),
        None => None,
    };
    let strategy = learner.describe();
    let seed = strategy.get("seed").and_then(|s| s.as_u64()).unwrap_or(0);
    let start = records.len();
    let stop = options.stop_after.map_or(end, |n| (start + n).min(end));
    for i in start..stop {
        let task = &stream.tasks()[i];
        if records.iter().any(|r| r.task_id == task.id) {
            return Err(Error::Revisit(task.id.clone()));
        }
        let started = Instant::now();
        let view = CausalView::new(stream, i)?;
        let out = learner.train_task(&view)?;
        let error = match phase {
            Phase::MetaTrain => out.val_error,
            Phase::MetaTest => out.model.evaluate(&task.id, task.kind, task.test())?,
        };
        let record = RunRecord {
            schema_version: RECORD_SCHEMA,
            phase,
            index: i,
            task_id: task.id.clone(),
            strategy: strategy.clone(),
            hparams: out.hparams,
            init_provenance: out.provenance,
            error,
            val_error: out.val_error,
            flops: out.flops,
            learning_curve: out.learning_curve,
            seed,
            wall_time: started.elapsed().as_secs_f64(),
            domain: task.domain.clone(),
            train_size: task.train().len(),
            avg_resolution: task.avg_resolution,
            scored: phase == Phase::MetaTrain || i >= stream.boundary(),
            trials: out.trials.len(),
        };
        log::info!("{} task {i} `{}`: error {:.4}, {} FLOPs", phase.name(), task.id, record.error, record.flops);
        if let Some(l) = log.as_mut() {
            l.append(&record)?;
        }
        records.push(record);
        if let Some(p) = &options.checkpoint {
            Checkpoint {
                phase,
                fingerprint: fingerprint(stream),
                records: records.clone(),
                learner: learner.snapshot(),
            }
            .save(p)?;
        }
    }
    if let (Some(p), true) = (&options.checkpoint, start == 0 && stop == 0) {
        Checkpoint { phase, fingerprint: fingerprint(stream), records: Vec::new(), learner: learner.snapshot() }
            .save(p)?;
    }
    let summary =
        if records.len() == end { Some(PhaseSummary::from_records(phase, strategy, &records)?) } else { None };
    Ok(PhaseResult { phase, records, summary })
}

const MAGIC: &[u8; 4] = b"SBCK";
const VERSION: u32 = 1;

/// Protocol position after a completed task.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    pub fingerprint: String,
    pub records: Vec<RunRecord>,
    pub learner: Vec<u8>,
}

impl Checkpoint {
    /// Index of the next task to learn.
    pub fn next_task(&self) -> usize {
        self.records.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(MAGIC, VERSION);
        w.str(self.phase.name());
        w.str(&self.fingerprint);
        w.str(&serde_json::to_string(&self.records).expect("records serialize"));
        w.bytes(&self.learner);
        w.into_bytes()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::header(buf, MAGIC)?;
        if version != VERSION {
            return Err(Error::Schema { found: version.to_string(), supported: VERSION });
        }
        let phase = match r.str()?.as_str() {
            "meta_train" => Phase::MetaTrain,
            "meta_test" => Phase::MetaTest,
            p => return Err(Error::Corrupt(format!("unknown phase `{p}` in checkpoint"))),
        };
        let fingerprint = r.str()?;
        let records =
            serde_json::from_str(&r.str()?).map_err(|e| Error::Corrupt(format!("checkpoint records: {e}")))?;
        let learner = r.bytes()?.to_vec();
        if !r.is_empty() {
            return Err(Error::Corrupt("trailing bytes after checkpoint".into()));
        }
        Ok(Self { phase, fingerprint, records, learner })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::record::tests::record;

    #[test]
    fn checkpoint_round_trip_and_header() {
        let cp = Checkpoint {
            phase: Phase::MetaTest,
            fingerprint: "abc".into(),
            records: vec![record(0, 0.1, 5, false)],
            learner: vec![1, 2, 3],
        };
        assert_eq!(Checkpoint::from_bytes(&cp.to_bytes()).unwrap(), cp);
        let mut bad = cp.to_bytes();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut newer = cp.to_bytes();
        newer[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&newer), Err(Error::Schema { .. })));
    }
}
