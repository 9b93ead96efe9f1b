use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("range condition violated: {0}")]
    RangeViolation(String),

    #[error("zero-trace matrix has no normalized square root")]
    ZeroTrace,

    #[error("dataset must contain at least one point")]
    EmptyDataset,

    #[error("input norm {norm} exceeds declared radius {radius} at row {row}")]
    RadiusExceeded { row: usize, norm: f64, radius: f64 },

    #[error("batch solver stopped after {iterations} sweeps with duality gap {gap:e} > tol {tol:e}")]
    NoConvergence { iterations: usize, gap: f64, tol: f64 },

    #[error("non-finite meta-gradient at step {step} (task {task})")]
    NonFiniteGradient { step: usize, task: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("malformed input at line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("all {0} runs of the sweep failed: {1}")]
    SweepFailed(usize, String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable identifier for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite(_) => "non_finite",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotPsd { .. } => "not_psd",
            Error::RangeViolation(_) => "range_violation",
            Error::ZeroTrace => "zero_trace",
            Error::EmptyDataset => "empty_dataset",
            Error::RadiusExceeded { .. } => "radius_exceeded",
            Error::NoConvergence { .. } => "no_convergence",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Infeasible(_) => "infeasible",
            Error::Malformed { .. } => "malformed_input",
            Error::SweepFailed(..) => "sweep_failed",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
