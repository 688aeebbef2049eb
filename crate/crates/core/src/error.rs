//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed record in an input file; reports the 1-based line and,
    /// where known, the offending field.
    #[error("{path}:{line}: parse error{}: {message}", field_suffix(.field))]
    Parse {
        path: PathBuf,
        line: usize,
        field: Option<&'static str>,
        message: String,
    },

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An input value is outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configured resource cap was exceeded.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Non-finite values or other numeric failures.
    #[error("numeric error: {0}")]
    Numeric(String),
}

fn field_suffix(field: &Option<&'static str>) -> String {
    match field {
        Some(f) => format!(" in field `{f}`"),
        None => String::new(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(
        path: impl Into<PathBuf>,
        line: usize,
        field: Option<&'static str>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse { path: path.into(), line, field, message: message.into() }
    }
}
