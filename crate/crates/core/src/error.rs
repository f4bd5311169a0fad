use thiserror::Error;

use crate::solver::Status;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid structure: {0}")]
    Structure(String),
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("solution is not optimal (status {0})")]
    NotOptimal(Status),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
