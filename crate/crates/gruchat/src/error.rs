use std::path::PathBuf;

/// Errors produced by the gruchat library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus too short: need at least {needed} usable characters, have {available}")]
    CorpusTooShort { needed: usize, available: usize },

    #[error("character id {id} is out of range for vocabulary of size {vocab}")]
    InvalidId { id: usize, vocab: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged: loss became non-finite at step {step}")]
    TrainDiverged { step: usize },

    #[error("bad magic: not a gruchat checkpoint")]
    BadMagic,

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("truncated checkpoint file")]
    TruncatedCheckpoint,

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
