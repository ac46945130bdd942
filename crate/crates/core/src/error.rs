use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),

    #[error("stationary initialization needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error(
        "mean specific force {norm:.3} m/s^2 outside [{lo}, {hi}]: platform not stationary/level"
    )]
    NotStationary { norm: f64, lo: f64, hi: f64 },

    #[error("no motion profile flagged; update must be skipped")]
    NoProfileFlagged,

    #[error("innovation covariance is not invertible")]
    SingularInnovation,

    #[error("measurement shape mismatch: {0}")]
    MeasurementShape(String),

    #[error("invalid trajectory spec: {0}")]
    InvalidTrajectory(String),

    #[error("detector window needs {needed} samples, got {got}")]
    WindowTooShort { needed: usize, got: usize },

    #[error("length mismatch: predicted {predicted}, truth {truth}")]
    LengthMismatch { predicted: usize, truth: usize },

    #[error("detector weights: {0}")]
    Weights(String),

    #[error("trajectories have no associable samples")]
    EmptyOverlap,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("{path}: row {row}: {msg}")]
    Csv {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, row: usize, msg: impl Into<String>) -> Self {
        Error::Csv {
            path: path.into(),
            row,
            msg: msg.into(),
        }
    }
}
