use thiserror::Error;

use crate::adapters::AdapterKind;

pub type Result<T, E = BhraError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BhraError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix data has {got} entries, expected {rows}x{cols}")]
    BadLength {
        rows: usize,
        cols: usize,
        got: usize,
    },

    #[error("non-finite value {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("svd did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("{what}: {dim} is not divisible by {parts}")]
    Divisibility {
        what: &'static str,
        dim: usize,
        parts: usize,
    },

    #[error("adapter kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: AdapterKind,
        found: AdapterKind,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("non-finite loss {value} at step {step}")]
    Diverged { step: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BhraError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        BhraError::InvalidConfig(msg.into())
    }
}
