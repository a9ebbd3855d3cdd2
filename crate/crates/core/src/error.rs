use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}, line {line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },

    #[error("missing or unreadable data for task `{task}`: {msg}")]
    MissingTaskData { task: String, msg: String },

    #[error("checksum mismatch for `{id}`: expected {expected}, got {actual}")]
    Checksum { id: String, expected: String, actual: String },

    #[error("download of `{id}` failed: {msg}")]
    Download { id: String, msg: String },

    #[error("extraction of `{id}` failed: {msg}")]
    Extraction { id: String, msg: String },

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("invalid stream: {0}")]
    InvalidStream(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("causality violation: learner at task {cursor} requested task {requested}")]
    Causality { cursor: usize, requested: usize },

    #[error("task `{0}` was already completed in this pass")]
    Revisit(String),

    #[error("non-finite loss at step {step} (learning_rate={learning_rate}, label_smoothing={label_smoothing})")]
    NonFiniteLoss { step: usize, learning_rate: f64, label_smoothing: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no head for task `{0}`")]
    MissingHead(String),

    #[error("missing pretrained parameters for strategy {0}")]
    MissingPretrained(String),

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("unsupported schema version {found} (supported major {supported})")]
    Schema { found: String, supported: u32 },

    #[error("all {trials} trials failed for task `{task}`; last error: {last}")]
    AllTrialsFailed { task: String, trials: usize, last: String },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
