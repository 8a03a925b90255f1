use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("degenerate input to {op}: {detail}")]
    Degenerate { op: &'static str, detail: String },

    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in loss component `{component}` at step {step}")]
    NonFinite { component: &'static str, step: usize },

    #[error("train/test leak: video `{0}` appears on both sides of a split")]
    Leak(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Annotation(#[from] AnnotationError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn degenerate(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Degenerate {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Format(_) | Error::Annotation(_) | Error::Leak(_)
        )
    }
}

/// Failures while decoding binary feature files and checkpoints.
#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: Vec<u8>, found: Vec<u8> },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: header promises {expected} bytes, file has {found}")]
    Truncated { expected: usize, found: usize },

    #[error("trailing bytes: header promises {expected} bytes, file has {found}")]
    TrailingBytes { expected: usize, found: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("zero-sized header field `{0}`")]
    ZeroDimension(&'static str),

    #[error("checkpoint tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
}

/// Failures while validating annotation sidecars.
#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("annotation parse error: {0}")]
    Parse(String),

    #[error("gt_scores[{index}] = {value} is outside [0, 1]")]
    ScoreRange { index: usize, value: f64 },

    #[error("gt_scores has length {found}, video has {expected} frames")]
    ScoreLength { expected: usize, found: usize },

    #[error("user {user} interval [{start}, {end}) is outside [0, {frames})")]
    IntervalBounds {
        user: usize,
        start: usize,
        end: usize,
        frames: usize,
    },

    #[error("user {user} interval [{start}, {end}) is empty or reversed")]
    EmptyInterval { user: usize, start: usize, end: usize },

    #[error("user {user} intervals [{a_start}, {a_end}) and [{b_start}, {b_end}) overlap")]
    Overlap {
        user: usize,
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },

    #[error("change points {0:?} do not form a partition of the video")]
    ChangePoints(Vec<usize>),

    #[error("annotation id `{found}` does not match file id `{expected}`")]
    IdMismatch { expected: String, found: String },
}
