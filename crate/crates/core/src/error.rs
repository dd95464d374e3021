use thiserror::Error;

use crate::provider::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {what} '{value}'")]
pub struct ParseEnumError {
    pub what: &'static str,
    pub value: String,
}

impl ParseEnumError {
    pub fn new(what: &'static str, value: &str) -> Self {
        Self {
            what,
            value: value.trim().to_owned(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// An operation's precondition does not hold.
    #[error("precondition failed: {message}")]
    Precondition {
        message: String,
        offending_ids: Vec<String>,
    },

    /// A store event would break a schema invariant.
    #[error("invariant '{rule}' violated: {message}")]
    Invariant { rule: String, message: String },

    #[error("{kind} '{id}' not found")]
    NotFound { kind: &'static str, id: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn precondition(message: impl Into<String>) -> Self {
        Error::Precondition {
            message: message.into(),
            offending_ids: Vec::new(),
        }
    }

    pub fn precondition_ids(message: impl Into<String>, ids: Vec<String>) -> Self {
        Error::Precondition {
            message: message.into(),
            offending_ids: ids,
        }
    }

    pub fn invariant(rule: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant {
            rule: rule.into(),
            message: message.into(),
        }
    }

    pub fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        Error::NotFound {
            kind,
            id: id.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable machine-readable code, used by the HTTP layer.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Precondition { .. } => "precondition_failed",
            Error::Invariant { .. } => "invariant_violated",
            Error::NotFound { .. } => "not_found",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Parse(_) => "parse_error",
            Error::Provider(_) => "provider_error",
            Error::Io { .. } => "io_error",
            Error::Json(_) => "json_error",
        }
    }

    pub fn offending_ids(&self) -> &[String] {
        match self {
            Error::Precondition { offending_ids, .. } => offending_ids,
            _ => &[],
        }
    }
}
