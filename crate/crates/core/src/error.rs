use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mesh size {0}: need at least one subdivision")]
    InvalidMeshSize(usize),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("exterior facet {facet} with midpoint ({x}, {y}) was left unlabeled")]
    UnlabeledFacet { facet: usize, x: f64, y: f64 },

    #[error("unsupported element: {0}")]
    UnsupportedElement(String),

    #[error("point ({x}, {y}) lies outside the reference domain")]
    OutsideReference { x: f64, y: f64 },

    #[error("unsupported quadrature exactness {0}")]
    UnsupportedQuadrature(usize),

    #[error("invalid form: {0}")]
    InvalidForm(String),

    #[error("quadrature degree {given} is below the estimated integrand degree {required}")]
    InsufficientQuadrature { given: usize, required: usize },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("rank {0} exceeds the supported maximum of 2")]
    RankTooHigh(usize),

    #[error("singular local factorization in cell {cell}: pivot {pivot:e} at row {row}")]
    SingularLocal { cell: usize, row: usize, pivot: f64 },

    #[error("singular matrix: pivot {pivot:e} at row {row}")]
    Singular { row: usize, pivot: f64 },

    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid field split: {0}")]
    InvalidSplit(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
