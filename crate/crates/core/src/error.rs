use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: shape mismatch, expected {expected:?}, got {actual:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("{context}: window longer than input (kernel {kernel}, input length {len})")]
    WindowTooLong {
        context: String,
        kernel: usize,
        len: usize,
    },

    #[error("{context}: non-finite value")]
    NonFinite { context: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{file}:{line}: column `{column}`: {message}")]
    Data {
        file: String,
        line: u64,
        column: String,
        message: String,
    },

    #[error("NSE undefined: zero observed variance")]
    ZeroVariance,

    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("worker {worker} failed: {message}")]
    WorkerFailed { worker: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable machine-readable tag, used in CLI error summaries and FFI status mapping.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::WindowTooLong { .. } => "window_too_long",
            Error::NonFinite { .. } => "non_finite",
            Error::Config(_) => "config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Data { .. } => "data",
            Error::ZeroVariance => "zero_variance",
            Error::Divergence { .. } => "divergence",
            Error::WorkerFailed { .. } => "worker_failed",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
