use std::path::PathBuf;

/// Errors produced anywhere in the alignment pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),

    #[error("affine transform is not invertible (det = {det:e})")]
    SingularTransform { det: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("point count mismatch: header declares {expected}, found {found}")]
    MismatchedCount { expected: usize, found: usize },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("model version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable identifier for the error variant, used in single-line CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateShape(_) => "DegenerateShape",
            Error::SingularTransform { .. } => "SingularTransform",
            Error::SingularSystem(_) => "SingularSystem",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::InvalidArg(_) => "InvalidArg",
            Error::InsufficientData(_) => "InsufficientData",
            Error::Parse { .. } => "ParseError",
            Error::MismatchedCount { .. } => "MismatchedCount",
            Error::UnsupportedFormat(_) => "UnsupportedFormat",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::CorruptModel(_) => "CorruptModel",
            Error::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
