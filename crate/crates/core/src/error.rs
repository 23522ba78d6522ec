use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate backbone frame at residue {residue}: N, CA and C are collinear")]
    DegenerateFrame { residue: usize },

    #[error("shape mismatch for `{name}`: expected {expected:?}, got {actual:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("length mismatch: sequence has {sequence} positions, structure has {structure}")]
    LengthMismatch { sequence: usize, structure: usize },

    #[error("token {token} at position {position} is outside the vocabulary")]
    TokenOutOfRange { position: usize, token: u8 },

    #[error("checkpoint format version mismatch: file has version {found}, this build reads version {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("loss became non-finite at step {step}")]
    Diverged { step: u64 },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
