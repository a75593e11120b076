use std::path::PathBuf;

use thiserror::Error;

/// Coarse classification used by front ends to map errors to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid parameters or configuration supplied by the caller.
    Config,
    /// Problems with the data itself: files, shapes, degenerate signals.
    Data,
    /// Violated numerical contracts or bugs.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid band: {0}")]
    InvalidBand(String),

    #[error("invalid filter order: {0}")]
    InvalidOrder(String),

    #[error("signal too short: {0}")]
    InsufficientLength(String),

    #[error("invalid resampling ratio: {0}")]
    InvalidRatio(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("invalid lag count: {0}")]
    InvalidLag(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("no decision windows: {0}")]
    NoWindows(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fold plan error: {0}")]
    Plan(String),

    #[error("incompatible datasets: {0}")]
    Compatibility(String),

    #[error("missing file {path}: {message}")]
    MissingFile { path: PathBuf, message: String },

    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical contract violated: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidBand(_) | InvalidOrder(_) | InvalidRatio(_) | InvalidExponent(_)
            | InvalidLag(_) | Config(_) => ErrorClass::Config,
            InsufficientLength(_) | ZeroVariance(_) | ShapeMismatch(_) | NoWindows(_)
            | Plan(_) | Compatibility(_) | MissingFile { .. } | CorruptDataset(_)
            | Schema(_) | Io { .. } => ErrorClass::Data,
            SingularSystem(_) | Numerical(_) => ErrorClass::Internal,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
