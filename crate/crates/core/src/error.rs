use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The variants map onto distinct process exit codes (see [`Error::exit_code`]) so
/// that scripted experiment runs can tell a bad input from a numerical failure or
/// a leakage violation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numerical error: {message} (condition estimate {condition:e})")]
    Numerical { message: String, condition: f64 },

    #[error("leakage violation: {0}")]
    Leakage(String),

    #[error("unsatisfiable stratification: {0}")]
    Unsatisfiable(String),

    #[error("not enough qualifying combinations: wanted {wanted}, found {found}")]
    Shortfall { wanted: usize, found: usize },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: u64,
        message: String,
    },

    #[error("missing predictions for {} window(s): {}", .0.len(), .0.join(", "))]
    Coverage(Vec<String>),

    #[error("unsupported format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code: 2 validation, 3 numerical, 4 leakage, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyInput(_)
            | Error::Validation(_)
            | Error::Schema { .. }
            | Error::Unsatisfiable(_)
            | Error::Shortfall { .. }
            | Error::Coverage(_)
            | Error::Format(_) => 2,
            Error::Numerical { .. } | Error::Divergence { .. } => 3,
            Error::Leakage(_) => 4,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
