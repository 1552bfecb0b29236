use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state must contain at least one agent")]
    EmptyState,

    #[error("opinions and weights differ in length ({opinions} vs {weights})")]
    LengthMismatch { opinions: usize, weights: usize },

    #[error("opinion {index} is not finite")]
    NonFiniteOpinion { index: usize },

    #[error("opinions must be sorted: opinions[{index}] < opinions[{}]", index - 1)]
    Unsorted { index: usize },

    #[error("weights[{index}] must be positive and finite, got {value}")]
    InvalidWeight { index: usize, value: f64 },

    #[error("agent index {index} out of range for {len} agents")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("vector length {got} does not match state length {expected}")]
    VectorLength { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("opinion span {span} is smaller than the window {window}")]
    SpanTooSmall { span: f64, window: f64 },

    #[error("state is not regular: {0}")]
    NotRegular(String),

    #[error("equilibrium not certified: {0}")]
    NotEquilibrium(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by user-supplied configuration rather than a
    /// failure while running.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::InvalidParameter { .. }
                | Error::InvalidDensity(_)
                | Error::InvalidWeight { .. }
                | Error::LengthMismatch { .. }
                | Error::NonFiniteOpinion { .. }
                | Error::Unsorted { .. }
                | Error::EmptyState
                | Error::Json(_)
        )
    }
}
