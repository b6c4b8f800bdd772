use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("input has no data rows")]
    Empty,
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse {value:?} as a number")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("column `{0}` has zero variance and cannot be standardized")]
    ZeroVariance(String),
    #[error("config file line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("{0}")]
    Model(#[from] changeplane_core::Error),
    #[error("fit did not converge")]
    NotConverged,
}

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 1,
    Data = 2,
    Convergence = 3,
}

impl AppError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            AppError::Usage(_) | AppError::Config { .. } => ExitCode::Usage,
            AppError::NotConverged => ExitCode::Convergence,
            AppError::Model(e) => match e {
                changeplane_core::Error::InvalidPenalty(_) | changeplane_core::Error::SegmentTooLarge { .. } => {
                    ExitCode::Usage
                }
                changeplane_core::Error::TuningFailed => ExitCode::Convergence,
                _ => ExitCode::Data,
            },
            _ => ExitCode::Data,
        }
    }
}
