use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input table. `row` is the 1-based data row (header excluded),
    /// `column` the 1-based column.
    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: usize,
        message: String,
    },

    /// Malformed group or group-list file; `line` is 1-based.
    #[error("{path}: line {line}: {message}")]
    GroupFile { path: String, line: usize, message: String },

    #[error("invalid group: {0}")]
    InvalidGroup(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{solver} did not converge after {iterations} iterations (final gap {gap:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        gap: f64,
    },

    #[error("projection program infeasible up to lambda {lambda:.4e} (max violation {violation:.3e})")]
    Infeasible { lambda: f64, violation: f64 },

    #[error("{failed} of {total} replicates failed, above the abort threshold")]
    TooManyFailures { failed: usize, total: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. } | Error::Infeasible { .. } | Error::TooManyFailures { .. }
        )
    }

    /// Process exit code: 2 for user/validation errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            3
        } else {
            2
        }
    }
}
