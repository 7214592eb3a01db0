use thiserror::Error;

#[derive(Debug, Error)]
pub enum VortesError {
    #[error("invalid tessellation: {0}")]
    InvalidTessellation(String),
    #[error("invalid hyperparameter {name}: {reason}")]
    InvalidHyperparameter { name: &'static str, reason: String },
    #[error("non-positive variance {value} at observation {index}")]
    NonPositiveVariance { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: usize },
    #[error("cache drift: {0}")]
    CacheDrift(String),
    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("trace format: {0}")]
    TraceFormat(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = VortesError> = std::result::Result<T, E>;
