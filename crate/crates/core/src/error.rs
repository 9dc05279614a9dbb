//! Crate-wide error type and the exit-code mapping used by the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad sizes, shapes, hyper-parameters or flags.
    #[error("configuration error: {0}")]
    Config(String),

    /// Well-formed input whose content violates a data contract.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed bytes on disk. `location` names a byte offset or a line.
    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    /// A computation produced or met a non-finite or degenerate value.
    #[error("numeric error in {op}: {reason}")]
    Numeric { op: String, reason: String },

    /// The caller broke a precondition of an API.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(op: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Numeric {
            op: op.into(),
            reason: reason.into(),
        }
    }

    pub fn parse_at_byte(offset: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            location: format!("byte {offset}"),
            reason: reason.into(),
        }
    }

    pub fn parse_at_line(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            location: format!("line {line}"),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Parse { .. } => "parse",
            Error::Version { .. } => "version",
            Error::Numeric { .. } => "numeric",
            Error::Contract(_) => "contract",
            Error::Degenerate(_) => "degenerate",
            Error::InfeasibleBudget(_) => "infeasible-budget",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code: 2 configuration, 3 data/parse, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::InfeasibleBudget(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::Version { .. } | Error::Io { .. } => 3,
            Error::Numeric { .. } | Error::Degenerate(_) => 4,
        }
    }
}
