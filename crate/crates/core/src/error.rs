use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel ({u}, {v}) outside {cols}x{rows} raster")]
    OutOfBounds { u: i64, v: i64, cols: usize, rows: usize },

    #[error("angle {0} rad is outside [0, pi)")]
    AngleDomain(f64),

    #[error("{0}")]
    Domain(String),

    #[error("all projection lines share the same direction")]
    DegenerateDirections,

    #[error("rays are near-parallel ({angle:e} rad); cannot triangulate")]
    DegenerateTriangulation { angle: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("incomplete stack: {0}")]
    IncompleteStack(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("all-zero spectra; normalisation undefined")]
    ZeroNormalization,

    #[error("config: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { what: what.into(), detail: detail.into() }
    }
}
