use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("idx {path}: {message} (at byte offset {offset})")]
    Idx {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("numerical failure in {stage} at iteration {iteration}")]
    Numerical { stage: &'static str, iteration: usize },

    #[error("forward cache is stale: recorded at parameter version {cached}, member is at {current}")]
    StaleCache { cached: u64, current: u64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    /// True for errors caused by bad input data rather than configuration or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Idx { .. } | Error::Csv(_) | Error::Io(_) | Error::Degenerate(_)
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Numerical { .. })
    }
}
