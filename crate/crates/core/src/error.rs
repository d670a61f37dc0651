use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("logistic labels must be -1 or +1 (found {value} at index {index})")]
    InvalidLabel { index: usize, value: f64 },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("simplex iteration limit ({0}) reached")]
    LpIterationLimit(usize),
    #[error("linear program is unbounded")]
    LpUnbounded,
    #[error("every primalization trial was infeasible, even at equality slack {0:e}")]
    AllTrialsInfeasible(f64),
    #[error("enumeration of {count} supports exceeds the cap of {cap}")]
    EnumerationTooLarge { count: u128, cap: u128 },
    #[error("Newton iteration did not converge after {0} steps")]
    NewtonNoConvergence(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
