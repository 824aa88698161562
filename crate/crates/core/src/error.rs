use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed array file: {0}")]
    Format(String),

    #[error("unsupported dtype `{descr}` (expected {expected})")]
    UnsupportedDtype { descr: String, expected: &'static str },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("zero-norm feature vector")]
    DegenerateFeature,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("eigensolver did not converge after {matvecs} matvecs (best relative residual {best_residual:.3e})")]
    Convergence { matvecs: usize, best_residual: f64 },

    #[error("degenerate partition: {0}")]
    DegeneratePartition(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("flow pairing needs at least two frames, got {0}")]
    Pairing(usize),

    #[error("round error: {0}")]
    Round(String),

    #[error("external exchange rejected {} file(s): {}", .0.len(), .0.join("; "))]
    Exchange(Vec<String>),

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
