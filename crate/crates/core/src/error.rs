use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("frame {frame}: RV window [{lo_s:.3}, {hi_s:.3}] s does not overlap the trace")]
    EmptyWindow { frame: usize, lo_s: f64, hi_s: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("non-finite activation after layer {layer}")]
    NonFiniteActivation { layer: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("scan sets differ: only in A {only_a:?}, only in B {only_b:?}")]
    ScanMismatch {
        only_a: Vec<String>,
        only_b: Vec<String>,
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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
