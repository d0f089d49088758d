use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: expected {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("shape mismatch: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    /// Sinkhorn iterations did not reach the marginal tolerance.
    #[error("sinkhorn did not converge after {iterations} iterations (marginal violation {violation:e})")]
    NotConverged { iterations: usize, violation: f64 },

    /// A backward stage produced a NaN or infinite gradient.
    #[error("non-finite gradient produced by `{stage}`")]
    NonFiniteGradient { stage: &'static str },

    /// Training loss blew up. Carries the last state whose loss was finite.
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged {
        step: u64,
        loss: f64,
        last_finite: Box<crate::field::Checkpoint>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scene generation error: {0}")]
    Generation(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("checksum mismatch in {0}")]
    Checksum(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad or missing data on disk.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Format { .. } | Error::Checksum(_) | Error::Image(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}
