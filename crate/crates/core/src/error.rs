use thiserror::Error;

/// Errors raised by the model, solver, and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("infeasible risk envelope: {0}")]
    Infeasible(String),

    #[error("value {value} at state ({a_d},{a_r}) node {node} outside [0, {bound}]")]
    ValueBound {
        value: f64,
        a_d: u32,
        a_r: u32,
        node: usize,
        bound: f64,
    },

    #[error("refused: {0}")]
    Guard(String),

    #[error("malformed document: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
