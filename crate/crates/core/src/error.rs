use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),
    #[error("out of domain: {0}")]
    OutOfDomain(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("sampler initialization failed: {0}")]
    Init(String),
    #[error("model returned NaN at coordinates {coords:?}: {msg}")]
    Model { msg: String, coords: Vec<(String, f64)> },
    #[error("diagnostics error: {0}")]
    Diagnostics(String),
    #[error("fitting track {track} failed: {source}")]
    Fit {
        track: String,
        #[source]
        source: Box<Error>,
    },
    #[error("classification error: {0}")]
    Classification(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
