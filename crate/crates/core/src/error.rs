use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NsktrError>;

/// Coarse error classes. The CLI maps these onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        }
    }
}

#[derive(Debug, Error)]
pub enum NsktrError {
    #[error("mode {mode} out of range for a {ndims}-way tensor")]
    ModeOutOfRange { mode: usize, ndims: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("logistic labels must be -1 or +1 (found {value} at index {index})")]
    InvalidLabel { index: usize, value: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("matrix factorization failed: {0}")]
    Factorization(&'static str),

    #[error("line search failed to decrease the objective after {0} halvings")]
    LineSearch(usize),

    #[error("non-finite objective at outer iteration {iteration}, mode {mode}")]
    NonFiniteObjective { iteration: usize, mode: usize },

    #[error("degenerate fit: residual variance {0:e} is zero, log-likelihood undefined")]
    DegenerateFit(f64),

    #[error("clean signal has zero energy; SNR is undefined")]
    ZeroSignal,

    #[error("reference tensor has zero Frobenius norm")]
    ZeroNormTruth,

    #[error("{}: not a {expected} file (bad magic)", .path.display())]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{}: unsupported format version {found}", .path.display())]
    UnsupportedVersion { path: PathBuf, found: u32 },

    #[error("{}: truncated payload ({detail})", .path.display())]
    Truncated { path: PathBuf, detail: String },

    #[error("{}: dimensions overflow the addressable size", .path.display())]
    DimsOverflow { path: PathBuf },

    #[error("{}: {detail}", .path.display())]
    Format { path: PathBuf, detail: String },

    #[error("config line {line}: {detail}")]
    ConfigParse { line: usize, detail: String },

    #[error("config key `{key}`: {detail}")]
    ConfigDomain { key: String, detail: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NsktrError {
    pub fn kind(&self) -> ErrorKind {
        use NsktrError::*;
        match self {
            Usage(_) => ErrorKind::Usage,
            Factorization(_)
            | LineSearch(_)
            | NonFiniteObjective { .. }
            | DegenerateFit(_)
            | NonFinite(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NsktrError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        NsktrError::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
