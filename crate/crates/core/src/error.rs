use std::path::PathBuf;

/// Errors produced by the toolkit.
///
/// Variants are grouped by failure class so that front ends can map them to
/// stable exit codes (see [`Error::kind`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("parse error on line {line}: {message}")]
    LineParse { line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("mapping error: category {0} has no class index")]
    Mapping(u64),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Integrity,
    Config,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. } | Error::LineParse { .. } => ErrorKind::Parse,
            Error::Integrity(_) | Error::Mapping(_) => ErrorKind::Integrity,
            Error::Config(_) | Error::Shape(_) | Error::Domain(_) => ErrorKind::Config,
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Converts a `serde_json` error into [`Error::Parse`], translating the
    /// reported line/column into a byte offset within `text`.
    pub fn from_json(err: &serde_json::Error, text: &str) -> Self {
        let offset = if err.is_eof() {
            text.len()
        } else {
            byte_offset(text, err.line(), err.column())
        };
        Error::Parse {
            offset,
            message: err.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}
