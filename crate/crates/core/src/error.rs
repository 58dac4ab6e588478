use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("equilibrium solver failed: {0}")]
    SolverFailure(String),

    #[error("illegal action: {0}")]
    IllegalAction(String),

    #[error("no feasible action (dead end)")]
    DeadEnd,

    #[error("{}: {message}", path.display())]
    TaskParse { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
