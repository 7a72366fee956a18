use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("invalid token sequence: {0}")]
    InvalidTokens(String),

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("prompt of {prompt} tokens plus {max_new} new tokens exceeds context of {max}")]
    BudgetExceedsContext {
        prompt: usize,
        max_new: usize,
        max: usize,
    },

    #[error("corpus has {len} bytes, need at least {min}")]
    CorpusTooSmall { len: usize, min: usize },

    #[error("non-finite training loss {loss} at step {step} (lr {lr}, batch {batch})")]
    NonFiniteLoss {
        step: usize,
        loss: f64,
        lr: f64,
        batch: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("checkpoint tensors overlap: {0}")]
    OffsetOverlap(String),

    #[error("sparsity {0} outside [0, 1)")]
    SparsityOutOfRange(f64),

    #[error("no activation statistics for {0}")]
    MissingStats(String),

    #[error(
        "Hessian of {name} is not positive definite after damping (pivot {pivot:.3e}); \
         try a larger damp_ratio"
    )]
    NotPositiveDefinite { name: String, pivot: f64 },

    #[error("singular least-squares subsystem in row {row}")]
    SingularSubsystem { row: usize },

    #[error("shape mismatch for {name}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("no valid (non-PAD) target positions")]
    NoValidPositions,

    #[error("evaluation set is empty")]
    EmptyEvalSet,

    #[error("relative change against a zero base")]
    ZeroBase,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("requested {requested} samples but only {available} records are available")]
    NotEnoughRecords { requested: usize, available: usize },

    #[error("judge reply is missing the `{0}` field")]
    MissingField(&'static str),

    #[error("judge score {field} = {value} is outside 1..=10")]
    OutOfRangeScore { field: &'static str, value: i64 },

    #[error("judge score {field} is not an integer: {raw:?}")]
    NonIntegerScore { field: &'static str, raw: String },

    #[error("judge transport error: {0}")]
    Transport(String),

    #[error("judge endpoint rejected credentials: {0}")]
    Auth(String),

    #[error("judge reply still unparseable after {attempts} attempts: {last}")]
    ParseFailure { attempts: usize, last: String },

    #[error("cannot aggregate an empty list of judge scores")]
    EmptyScores,

    #[error("invalid experiment config: {0}")]
    Config(String),

    #[error("checkpoint not found: {0}")]
    CheckpointMissing(PathBuf),

    #[error("dataset not found: {0}")]
    DatasetMissing(PathBuf),

    #[error("report has no rows")]
    EmptyRows,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from user input (configuration, arguments,
    /// missing files) rather than a failure while running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::Config(_)
                | Error::SparsityOutOfRange(_)
                | Error::CheckpointMissing(_)
                | Error::DatasetMissing(_)
                | Error::NotEnoughRecords { .. }
                | Error::CorpusTooSmall { .. }
        )
    }
}
