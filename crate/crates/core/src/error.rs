use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid Verblunsky coefficient at index {index}: |gamma| = {modulus}")]
    InvalidCoefficient { index: usize, modulus: f64 },

    #[error("polynomial degree {requested} exceeds the oracle capacity {cap}")]
    Capacity { requested: usize, cap: usize },

    #[error("checkpoint {k} is out of range (at most {max})")]
    Range { k: usize, max: usize },

    #[error("coupling mismatch: {0}")]
    Coupling(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("both arc endpoints ({0}, {1}) are excluded grid points")]
    UndefinedEndpoint(usize, usize),

    #[error("every grid point is excluded")]
    EmptyField,

    #[error("no records for cell {0}")]
    MissingCell(String),

    #[error("rank deficient fit: {0}")]
    Rank(String),

    #[error("quadrature did not converge: {0}")]
    Numerical(String),

    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("clock is not strictly increasing at index {0}")]
    Clock(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
