use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid probability mass function: {0}")]
    InvalidPmf(String),

    #[error("risk envelope is empty")]
    InfeasibleEnvelope,

    #[error("envelope dimension {dim} exceeds the enumeration cap of {cap}")]
    EnvelopeTooLarge { dim: usize, cap: usize },

    #[error("scenario tree with {nodes} nodes exceeds the cap of {cap}")]
    TreeTooLarge { nodes: u128, cap: usize },

    #[error("terminal synthesis is infeasible: {0}")]
    SynthesisInfeasible(String),

    #[error("online program is infeasible at x = {state:?}: {reason}")]
    MpcInfeasible { state: Vec<f64>, reason: String },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
