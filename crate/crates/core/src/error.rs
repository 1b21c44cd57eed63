use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("referential integrity: tx {tx_id} {message}")]
    Reference { tx_id: u64, message: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unknown node {0}")]
    UnknownNode(u64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Reference { .. } => "reference",
            Error::Consistency(_) => "consistency",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Degenerate(_) => "degenerate",
            Error::Infeasible(_) => "infeasible",
            Error::UnknownNode(_) => "unknown_node",
            Error::Domain(_) => "domain",
            Error::Undefined(_) => "undefined",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
        }
    }

    /// Input problems (missing files, malformed content, bad flags) are usage
    /// errors and exit with 2; everything else is a pipeline failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Reference { .. }
            | Error::Config(_)
            | Error::Format(_) => 2,
            _ => 1,
        }
    }
}
