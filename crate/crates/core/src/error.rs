use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value failed validation. `key` names the offending entry.
    #[error("invalid configuration at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(
        "{what} did not converge after {iterations} iterations (relative residual {residual:.3e})"
    )]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("{0}")]
    OutOfRange(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("singular system: {message} (condition estimate {condition:.3e})")]
    Singular { message: String, condition: f64 },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
