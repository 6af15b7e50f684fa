use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("input length mismatch: expected {expected}, got {actual}")]
    InputLength { expected: usize, actual: usize },

    #[error("no valid {d}-way factorization of {n} into factors >= 2")]
    Factorization { n: usize, d: usize },

    #[error("dense reconstruction of {rows}x{cols} exceeds the cap of {cap} entries")]
    ReconstructionTooLarge { rows: usize, cols: usize, cap: usize },

    #[error("cache does not match the layer it is used with: {0}")]
    CacheMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Divergence { epoch: usize, step: usize, reason: String },

    #[error("signal too short: need at least {needed} samples/frames, got {actual}")]
    TooShort { needed: usize, actual: usize },

    #[error("silent signal: {0}")]
    Silent(String),

    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("unsupported {what} version {found} (this build reads up to {supported})")]
    Version {
        what: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures of the numerics themselves (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Divergence { .. })
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
