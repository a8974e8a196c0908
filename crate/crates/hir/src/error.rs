use thiserror::Error;

/// Errors raised across the representation pipeline.
#[derive(Error, Debug)]
pub enum HirError {
    #[error("invalid basis parameter: {0}")]
    InvalidParameter(String),
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error on {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, HirError>;
