use std::fmt;

use seqdesign_core::Error;

/// Process exit statuses.
pub mod code {
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const CHECKPOINT: u8 = 4;
    pub const DATA: u8 = 5;
    pub const RUNTIME: u8 = 6;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(code::CONFIG, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(code::DATA, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => code::CONFIG,
            Error::CheckpointVersion { .. }
            | Error::MissingTensor(_)
            | Error::CorruptCheckpoint(_) => code::CHECKPOINT,
            Error::Parse { .. } | Error::InvalidStructure(_) | Error::Io(_) | Error::Json(_) => {
                code::DATA
            }
            Error::DegenerateFrame { .. }
            | Error::Shape { .. }
            | Error::LengthMismatch { .. }
            | Error::TokenOutOfRange { .. }
            | Error::Diverged { .. }
            | Error::Invalid(_) => code::RUNTIME,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
