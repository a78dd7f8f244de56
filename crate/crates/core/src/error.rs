use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A mean, probability, or parameter fell outside the set where the
    /// operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed caller input (bad index, wrong observation value, invalid
    /// probability vector, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration document failed validation. `key` names the offending
    /// entry using dotted notation.
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// A numerical routine could not bracket or converge.
    #[error("solver error: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
