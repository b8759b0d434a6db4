use thiserror::Error;

use crate::lattice::NodeId;

/// Errors raised by the solver and its verification tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("instance too large: {what} needs {count} but the cap is {cap}")]
    InstanceTooLarge { what: &'static str, count: u128, cap: u128 },

    #[error("empty kernel set{0}")]
    EmptyKernelSet(String),

    #[error("missing value: {0}")]
    MissingValue(String),

    #[error("control exceeds its intervention budget of {budget} at {node}")]
    BudgetExceeded { node: NodeId, budget: usize },

    #[error("strategy picked kernel {index} but only {available} are available at {node}")]
    KernelIndexOutOfRange { node: NodeId, index: usize, available: usize },

    #[error("invalid discretization at {node} for control {control}: up/down probability {probability} exceeds 1/2")]
    InvalidDiscretization { node: NodeId, control: usize, probability: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
