use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid non-preference target: {0}")]
    InvalidTarget(String),
    #[error("cluster supports overlap at index {0}")]
    OverlappingSupports(usize),
    #[error("cluster {cluster}: target support does not match index set at {index}")]
    SupportMismatch { cluster: usize, index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionError(String),
    #[error("value outside domain: {0}")]
    DomainError(String),
    #[error("retention ordering violated: alpha_t={alpha_t} > alpha_s={alpha_s}")]
    OrderingError { alpha_s: f64, alpha_t: f64 },
    #[error("state {x_t} unreachable from {x0} under the fading matrix")]
    UnreachableState { x0: usize, x_t: usize },
    #[error("reverse transition collapsed to the zero vector")]
    DegenerateReverse,
    #[error("magnitude {0} exceeds the guarded range")]
    MagnitudeError(f64),
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error("empty history for a non-φ user")]
    EmptyHistory,
    #[error("numerical error: {0}")]
    NumericalError(String),
    #[error("data error: {0}")]
    DataError(String),
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("line {line}: item {item} out of range for corpus of {n}")]
    RangeError { line: usize, item: usize, n: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
