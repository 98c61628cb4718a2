use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("line {line}: malformed header: {reason}")]
    Header { line: usize, reason: String },
    #[error("expected {expected} map rows, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error("row {row}: expected {expected} cells, found {found}")]
    RowLength { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {col}: unknown cell character {ch:?}")]
    UnknownCell { row: usize, col: usize, ch: char },
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("map has room for {available} positions, {requested} requested")]
    NotEnoughCells { requested: usize, available: usize },
    #[error("instance invalid: {0}")]
    InvalidInstance(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
