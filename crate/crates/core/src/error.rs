use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument left the operation's valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A scenario field failed validation; `key` is the offending path.
    #[error("invalid config value at `{key}`: {message}")]
    Config { key: String, message: String },

    /// The simulation state became non-finite.
    #[error("numerical blowup at tick {tick}: {what}")]
    NumericalBlowup { tick: u64, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed scenario: {0}")]
    Json(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
