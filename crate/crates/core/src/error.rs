use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum RfrError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("row {0} has (near) zero norm and cannot be normalized")]
    ZeroRow(usize),
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("Jacobi iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("rho must lie in (0, 1], got {0}")]
    BadRho(f64),
    #[error("eigenvalues do not lie on the simplex (sum = {0})")]
    BadSimplex(f64),
    #[error("cannot shrink head from {current} to {requested} classes")]
    Shrink { current: usize, requested: usize },
    #[error("spread must be positive, got {0}")]
    BadSpread(f64),
    #[error("invalid task split: {0}")]
    BadSplit(String),
    #[error("classes {0:?} were already seen in an earlier session")]
    ClassOverlap(Vec<usize>),
    #[error("missing snapshot: {0}")]
    MissingSnapshot(&'static str),
    #[error("evaluation data contains class {0} which has not been seen")]
    UnseenClassInEval(usize),
    #[error("networks have different extractor shapes")]
    ShapeMismatch,
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("no base-session accuracy recorded")]
    MissingBaseline,
    #[error("truncated CIFAR file: {0} bytes is not a multiple of 3074")]
    TruncatedFile(usize),
    #[error("record {record}: fine label {label} out of range")]
    LabelOutOfRange { record: usize, label: u8 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = RfrError> = std::result::Result<T, E>;

impl RfrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RfrError::Io {
            path: path.into(),
            source,
        }
    }
}
