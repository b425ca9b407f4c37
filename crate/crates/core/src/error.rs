use thiserror::Error;

use crate::imageio::PgmError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pgm: {0}")]
    Pgm(#[from] PgmError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image {width}x{height} is not divisible into {block_side}x{block_side} blocks")]
    NotDivisible {
        width: usize,
        height: usize,
        block_side: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("zero coefficient cannot carry a payload bit")]
    ZeroCoefficient,
    #[error("message needs {required} bits but capacity is {capacity} bits")]
    CapacityExceeded { capacity: usize, required: usize },
    #[error("header announces {announced} bits but only {available} are available")]
    TruncatedStream { announced: usize, available: usize },
    #[error("corrupt stream or wrong keys: {0}")]
    CorruptStream(String),
    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),
    #[error("singular matrix")]
    SingularMatrix,
    #[error("unknown contrast function {0:?}")]
    UnknownContrast(String),
    #[error("key file: {0}")]
    KeyFormat(String),
}
