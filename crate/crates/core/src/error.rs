use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid offspring distribution: {0}")]
    InvalidOffspring(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
