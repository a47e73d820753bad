use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The residual vanished, so the normalized statistic is undefined.
    #[error("residual has zero norm")]
    ZeroResidual,

    #[error("gram matrix singular when adding column {column} (pivot {pivot:e} <= floor {floor:e})")]
    GramSingular { column: usize, pivot: f64, floor: f64 },

    #[error("covariance matrix is not positive definite")]
    SigmaNotPd,

    #[error("invalid covariance matrix: {0}")]
    InvalidSigma(String),

    #[error("tail l1 budget cannot be placed: needs {needed} entries, {available} available")]
    InfeasibleTail { needed: usize, available: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("h = sqrt(kbar/n) + mu_n = {h} is not < 1; n = {n} is too small")]
    HNotLessThanOne { h: f64, n: u64 },

    #[error("problem too large for exhaustive search: p = {p} (max {max_p}), max_k = {max_k} (max {max_max_k})")]
    TooLarge {
        p: usize,
        max_p: usize,
        max_k: usize,
        max_max_k: usize,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
