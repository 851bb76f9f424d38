//! Error type shared by every module in the simulator.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("sqrt of negative entry {value} at index {index}")]
    SqrtNegative { index: usize, value: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Training or a server update produced a non-finite result. `step` is
    /// the local step index (client) or the round counter (server).
    #[error("divergence in {origin} at step {step}: {detail}")]
    Divergence {
        origin: String,
        step: usize,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    File { path: String, message: String },

    #[error("csv parse error at row {row}, column {col}: {message}")]
    CsvParse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("partitioning failed after {attempts} attempts: {hint}")]
    PartitionRetriesExhausted { attempts: usize, hint: String },

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl Error {
    /// Exit code the CLI maps this error to: 3 for divergence, 2 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}
