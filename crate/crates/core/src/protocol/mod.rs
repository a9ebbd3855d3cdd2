//! The stream driver: meta-train and meta-test passes under a causality
//! guard, per-task records, and checkpointing.

mod driver;
mod record;
mod view;

pub use driver::{resume, run_meta_test, run_meta_train, Checkpoint, PhaseResult, RunOptions};
pub use record::{read_records, Phase, PhaseSummary, RecordLog, RunRecord, RECORD_SCHEMA};
pub use view::{CausalView, TaskInfo};
