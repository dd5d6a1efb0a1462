use std::io;

use thiserror::Error;

use crate::ledger::BudgetExceeded;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("vertex index {index} out of range for {num_vertices} vertices (line {line})")]
    IndexOutOfRange {
        line: usize,
        index: u64,
        num_vertices: u32,
    },

    #[error("graph has no vertices")]
    EmptyGraph,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed feature file: {0}")]
    Format(String),

    #[error("invalid value: {0}")]
    Value(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    BudgetExceeded(#[from] BudgetExceeded),

    #[error("no chunk width fits the budget: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn is_oom(&self) -> bool {
        matches!(self, Error::BudgetExceeded(_))
    }
}
