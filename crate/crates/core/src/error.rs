use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error at {}: key `{key}`: {message}", line.map(|l| format!("line {l}")).unwrap_or_else(|| "end of file".into()))]
    Config {
        line: Option<usize>,
        key: String,
        message: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite diagnostic encountered; last good time t = {last_good_t}")]
    NonFinite { last_good_t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
