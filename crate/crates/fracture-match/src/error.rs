//! Crate error type.
//!
//! A single enum covers all failure modes; [`Error::category`] groups the
//! variants into the coarse classes callers (notably the CLI) care about:
//! bad arguments, bad input data, numerical breakdown, or plain I/O.

use std::path::PathBuf;

/// Coarse failure class, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Caller passed an invalid argument or inconsistent configuration.
    Usage,
    /// Input files are malformed or internally inconsistent.
    DataFormat,
    /// A numerical procedure failed (degenerate matrices, non-convergence).
    Numerical,
    /// Underlying I/O failure.
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("non-rectangular grid: row {row} has {got} values, expected {expected}")]
    NonRectangular { row: usize, got: usize, expected: usize },

    #[error("non-finite height value at column {x}, row {y}")]
    NonFinite { x: usize, y: usize },

    #[error("row {row}, column {col}: cannot parse {token:?} as a height")]
    MalformedValue { row: usize, col: usize, token: String },

    #[error("pixel pitch must be positive and finite, got {0} um")]
    NonPositivePitch(f64),

    #[error("height map is empty")]
    EmptyGrid,

    #[error("image {width}x{height} too small: operation requires at least {min}x{min} pixels")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("strip {have} px wide cannot hold {count} windows of {window} px at stride {stride}: needs {needed} px")]
    StripTooNarrow { have: usize, needed: usize, window: usize, count: usize, stride: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("frequency band [{lo}, {hi}) mm^-1 selects no spectral bins on a {width}x{height} grid")]
    EmptyBand { lo: f64, hi: f64, width: usize, height: usize },

    #[error("matrix not positive definite while {context}")]
    NotPositiveDefinite { context: &'static str },

    #[error("degenerate scatter matrix (rank-deficient residuals); provide more varied samples or enable the ridge option")]
    DegenerateScatter,

    #[error("need at least {min} sample matrices, got {got}")]
    TooFewSamples { got: usize, min: usize },

    #[error("configuration fingerprint mismatch: model was built with {model}, request uses {request}")]
    FingerprintMismatch { model: String, request: String },

    #[error("{path}: bad model or manifest file: {reason}")]
    BadFile { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    WithContext {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Io { .. } => ErrorCategory::Io,
            MalformedHeader { .. } | NonRectangular { .. } | NonFinite { .. } | EmptyGrid
            | MalformedValue { .. } | BadFile { .. } | FingerprintMismatch { .. } => {
                ErrorCategory::DataFormat
            }
            NonPositivePitch(_) | ImageTooSmall { .. } | StripTooNarrow { .. }
            | InvalidParameter { .. } | DimensionMismatch(_) | EmptyBand { .. }
            | TooFewSamples { .. } => ErrorCategory::Usage,
            NotPositiveDefinite { .. } | DegenerateScatter => ErrorCategory::Numerical,
            WithContext { source, .. } => source.category(),
        }
    }

    /// Wraps the error with a description of what was being processed.
    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::WithContext { context: context.into(), source: Box::new(self) }
    }

    /// An I/O failure tagged with the path it happened on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// An invalid-parameter error naming the offending argument.
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
