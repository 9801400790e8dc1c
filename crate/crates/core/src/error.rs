//! Crate-wide error type.

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix or model shapes.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid argument outside its stated domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// CSV or file ingestion failure, naming the offending location.
    #[error("ingestion error: {0}")]
    Ingest(String),

    /// Violation of the synchronous VFL message contract.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Inconsistent attack configuration or evidence.
    #[error("attack setup error: {0}")]
    AttackSetup(String),

    /// Defense optimization produced unusable state.
    #[error("defense error: {0}")]
    Defense(String),

    /// Invalid experiment configuration; `path` is the offending field.
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    /// Reporting over inconsistent run records.
    #[error("reporting error: {0}")]
    Report(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
