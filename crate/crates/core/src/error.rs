use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures of the on-disk formats (datasets and checkpoints).
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (this build reads {supported})")]
    Version { found: u32, supported: u32 },
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed record: {0}")]
    Malformed(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("degenerate input: row {row} has zero norm")]
    Degenerate { row: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("unknown language {0:?}")]
    UnknownLanguage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parseable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::UnknownLanguage(_) => "config",
            Error::Io { .. } | Error::Format { .. } => "io",
            Error::Protocol(_) => "protocol",
            Error::Divergence { .. } => "divergence",
            Error::Shape { .. } | Error::Degenerate { .. } | Error::NonFinite(_) => "numeric",
        }
    }
}
