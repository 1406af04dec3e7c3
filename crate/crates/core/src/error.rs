use thiserror::Error;

use crate::quantfmt::QuantFormat;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value at index {index}: {value} is not finite")]
    InvalidValue { index: usize, value: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported kernel format {0}")]
    UnsupportedFormat(QuantFormat),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("range error: {0}")]
    Range(String),

    #[error("empty trace")]
    EmptyTrace,

    #[error("fixture parse error on line {line}: {message}")]
    Fixture { line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
