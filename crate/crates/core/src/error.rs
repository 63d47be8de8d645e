use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: column `{column}` not found in header")]
    MissingColumn { column: String },

    #[error("parse error at row {row}, column `{column}`: cannot read {value:?} as {expected}")]
    Parse {
        /// 1-based data row (the header is row 0).
        row: usize,
        column: String,
        value: String,
        expected: &'static str,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected} values, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error(
        "training diverged at iteration {iteration} (non-finite loss); \
         try a smaller learning rate than {learning_rate}"
    )]
    Divergence {
        iteration: usize,
        learning_rate: f64,
    },

    #[error("group {0} has no calibration samples")]
    MissingGroup(usize),

    #[error("oracle size guard: bin of {size} samples exceeds the limit of {limit}")]
    SizeGuard { size: usize, limit: usize },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
