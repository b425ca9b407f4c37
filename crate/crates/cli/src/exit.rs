//! Process exit codes and the failure type that carries them.

use serde_json::Value;

pub const OK: i32 = 0;
pub const INPUT: i32 = 1;
pub const CAPACITY: i32 = 2;
pub const CORRUPT: i32 = 3;
pub const USAGE: i32 = 64;

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    /// The report still gets written, with the capacity in it.
    #[error("capacity exceeded: need {required} bits, have {capacity}")]
    Capacity {
        capacity: usize,
        required: usize,
        report: Value,
    },
    #[error("corrupt stream or wrong keys: {0}")]
    Corrupt(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => USAGE,
            Failure::Input(_) => INPUT,
            Failure::Capacity { .. } => CAPACITY,
            Failure::Corrupt(_) => CORRUPT,
        }
    }
}

impl From<stegolab::Error> for Failure {
    fn from(e: stegolab::Error) -> Self {
        use stegolab::Error as E;
        match e {
            E::CapacityExceeded { capacity, required } => Failure::Capacity {
                capacity,
                required,
                report: serde_json::json!({
                    "error": "capacity_exceeded",
                    "capacity_bits": capacity,
                    "required_bits": required,
                }),
            },
            E::TruncatedStream { .. } | E::CorruptStream(_) => Failure::Corrupt(e.to_string()),
            E::InvalidParameter(_) | E::UnknownContrast(_) => Failure::Usage(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}
