use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("backward called on `{0}` before forward")]
    BackwardBeforeForward(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The target needs more frames than the prediction has.
    #[error("infeasible alignment: target needs {required} frames, only {available} available")]
    InfeasibleAlignment { required: usize, available: usize },

    /// Training produced NaN/Inf. Carries the iteration and the first offending location.
    #[error("numeric failure at iteration {iteration}: {provenance}")]
    NumericFailure { iteration: usize, provenance: String },

    #[error("{source_name}:{line}: key `{key}`: {message}")]
    Config {
        source_name: String,
        line: usize,
        key: String,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
