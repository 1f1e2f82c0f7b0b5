//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ClaireError>;

#[derive(Debug, Error)]
pub enum ClaireError {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("parse error in {path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("row alignment error: {0}")]
    Alignment(String),

    #[error("invalid selection: {0}")]
    Selection(String),

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("class imbalance error: {0}")]
    Imbalance(String),

    #[error("batch-size error: {0}")]
    BatchSize(String),

    #[error("non-finite value in loss term `{term}`: {value}")]
    NonFinite { term: &'static str, value: f64 },

    #[error("training diverged at epoch {epoch}, batch {batch}: term `{term}` = {value}")]
    Divergence {
        epoch: usize,
        batch: usize,
        term: &'static str,
        value: f64,
    },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("black-box interface error: {0}")]
    Interface(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("class coverage error: {0}")]
    ClassCoverage(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data leakage: {0}")]
    Leakage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl ClaireError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ClaireError::Io {
            path: path.into(),
            source,
        }
    }
}
