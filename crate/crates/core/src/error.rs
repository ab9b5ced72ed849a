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
    Parse { line: usize, message: String },

    #[error("payload length: expected {expected} {unit}, found {found}")]
    PayloadLength {
        expected: usize,
        found: usize,
        unit: &'static str,
    },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("checksum mismatch: header says {expected}, payload hashes to {found}")]
    Checksum { expected: String, found: String },

    #[error("missing channels: {}", .0.join(", "))]
    ChannelMap(Vec<String>),

    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("leakage guard: {0}")]
    Leakage(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Coarse category, used by the CLI to pick an exit code.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::SchemaVersion { .. } => ErrorCategory::Config,
            Error::Numeric(_) => ErrorCategory::Numeric,
            Error::Stage { source, .. } => source.category(),
            _ => ErrorCategory::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}
