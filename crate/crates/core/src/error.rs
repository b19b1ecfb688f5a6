use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("values are not monotone at index {index} (drop of {drop:e})")]
    NotMonotone { index: usize, drop: f64 },

    #[error("range violation: {0}")]
    RangeViolation(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("squared-distance matrix is not symmetric: |D[{i},{j}] - D[{j},{i}]| = {diff:e}")]
    AsymmetricInput { i: usize, j: usize, diff: f64 },

    #[error("invalid distance matrix: {0}")]
    InvalidDistances(String),

    #[error(
        "metric {metric} is not of negative type on this sample: eigenvalue {min_eigenvalue:e} \
         below -{psd_tol:e} * {max_eigenvalue:e}"
    )]
    NotNegativeType {
        metric: String,
        min_eigenvalue: f64,
        max_eigenvalue: f64,
        psd_tol: f64,
    },

    #[error("requested {requested} components but numerical rank is {rank}")]
    InsufficientRank { requested: usize, rank: usize },

    #[error("eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("quadrature weights must be positive")]
    NonpositiveWeights,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },

    #[error("empty input")]
    EmptyInput,

    #[error("zero total mass for unit `{unit}` at time {time}")]
    ZeroTotalMass { unit: String, time: f64 },

    #[error("age grid mismatch for unit `{unit}` at time {time}: {message}")]
    AgeGridMismatch {
        unit: String,
        time: f64,
        message: String,
    },

    #[error("no time point is shared by every unit")]
    NoCommonTimes,

    #[error("incomplete panel, missing cells: {}", .0.join(", "))]
    IncompletePanel(Vec<String>),

    #[error("synthetic age grid too narrow: {0}")]
    GridTooNarrow(String),

    #[error("operation requires the {expected} metric, dataset uses {got}")]
    WrongMetric { expected: String, got: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
