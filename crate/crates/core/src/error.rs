use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the counting engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or shape combination that can never work.
    #[error("configuration error: {0}")]
    Config(String),

    /// Data that violates a documented invariant (shapes, bounds, finiteness).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("batch norm running statistics are uninitialized; run a train-mode pass first")]
    UninitializedStatistics,

    /// The finite-difference oracle saw two different values for the same input.
    #[error("gradient oracle invalid: computation is not deterministic ({first} vs {second})")]
    OracleInvalid { first: f64, second: f64 },

    #[error(
        "training diverged at step {step}: expert loss {expert_loss}, gate loss {gate_loss}, max |param| {max_abs_param}"
    )]
    Diverged {
        step: u64,
        expert_loss: f64,
        gate_loss: f64,
        max_abs_param: f64,
    },

    #[error("metric {metric} undefined: zero ground truth for scenes {scenes:?}")]
    MetricUndefined { metric: &'static str, scenes: Vec<String> },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Distinct failure modes when reading a checkpoint file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic: expected \"MOCC\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint format version {found} (this build reads {supported})")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("shape inconsistency for tensor {name}: {detail}")]
    ShapeMismatch { name: String, detail: String },
    #[error("checkpoint precision is {found}, requested {requested}")]
    PrecisionMismatch {
        found: &'static str,
        requested: &'static str,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}
