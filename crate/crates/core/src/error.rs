use std::path::PathBuf;

/// Every failure the library can report. The CLI maps these onto exit codes
/// through [`Error::kind`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {operand}: {detail}")]
    Shape { operand: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("fully masked row {row}: attention needs at least one visible key")]
    FullyMaskedRow { row: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("tokenization error: {0}")]
    Tokenization(String),

    #[error("index out of range: {0}")]
    Range(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error(
        "truncated blob: sample {sample} needs bytes {start}..{end}, blob file has {available}"
    )]
    TruncatedBlob {
        sample: String,
        start: u64,
        end: u64,
        available: u64,
    },

    #[error("manifest/blob inconsistency: {0}")]
    Inconsistent(String),

    #[error("not a checkpoint: missing magic header")]
    NotCheckpoint,

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLengthMismatch { expected: u64, found: u64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn shape(operand: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            operand: operand.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Shape { .. }
            | Error::Config(_)
            | Error::Contract(_)
            | Error::FullyMaskedRow { .. }
            | Error::Capacity(_)
            | Error::Range(_) => ErrorKind::Config,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Tokenization(_)
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::VersionMismatch { .. }
            | Error::TruncatedBlob { .. }
            | Error::Inconsistent(_)
            | Error::NotCheckpoint
            | Error::PayloadLengthMismatch { .. }
            | Error::ShapeMismatch(_) => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
