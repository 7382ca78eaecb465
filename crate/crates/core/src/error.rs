use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FcplError>;

#[derive(Debug, Error)]
pub enum FcplError {
    #[error("vector norm {norm:e} is at or below the normalization floor")]
    DegenerateNorm { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("interval [{start}, {end}] is out of bounds for a video of {len_s} s")]
    IntervalOutOfBounds { start: f64, end: f64, len_s: f64 },

    #[error("no negative candidate available for anchor")]
    NoNegativeAvailable,

    #[error("non-finite loss in {stage} (model {model}, epoch {epoch}, batch {batch}): {detail}")]
    NonFiniteLoss {
        stage: String,
        model: usize,
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("missing video `{0}`")]
    MissingVideo(String),

    #[error("descriptor sets do not match: {0}")]
    MismatchedSets(String),

    #[error("ground truth contains no positives")]
    EmptyGroundTruth,

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FcplError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FcplError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        FcplError::CorruptFile {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Errors caused by bad input (files, flags, config) rather than by a
    /// failure inside the computation.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            FcplError::NonFiniteLoss { .. } | FcplError::DegenerateNorm { .. }
        )
    }
}
