use std::path::PathBuf;

use crate::spec::Violation;

/// Exit-code classes for the CLI and FFI: configuration problems are 1,
/// data problems are 2, numerical fitting failures are 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Fit,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid spec: {}", format_violations(.0))]
    InvalidSpec(Vec<Violation>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data mismatch: {0}")]
    DataMismatch(String),

    #[error("no observations")]
    EmptyData,

    #[error("split produced an empty {side} side")]
    EmptySplit { side: &'static str },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("cluster tensor too large: {cells} permutations exceeds the {max} cap")]
    TensorTooLarge { cells: u128, max: u64 },

    #[error("fit failed: {0}")]
    Fit(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidSpec(_)
            | Error::Config(_)
            | Error::TensorTooLarge { .. } => ErrorClass::Config,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::DataMismatch(_)
            | Error::EmptyData
            | Error::EmptySplit { .. }
            | Error::ModelFormat(_) => ErrorClass::Data,
            Error::Fit(_) => ErrorClass::Fit,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.class() {
            ErrorClass::Config => 1,
            ErrorClass::Data => 2,
            ErrorClass::Fit => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
