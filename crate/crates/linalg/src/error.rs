//! Error type shared by the whole workspace.
//!
//! Every fallible operation returns one of these variants; the CLI maps
//! them to an error name on stderr and exit code 1.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    Shape(String),
    Numeric(String),
    Domain(String),
    BaseModelMismatch { base: u64, artifact: u64 },
    DegenerateInput(String),
    Config(String),
    Tape(String),
    Format(String),
    CorruptFile(String),
    Io(String),
}

impl Error {
    /// Stable name used by the CLI on stderr.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Shape(_) => "ShapeError",
            Error::Numeric(_) => "NumericError",
            Error::Domain(_) => "DomainError",
            Error::BaseModelMismatch { .. } => "BaseModelMismatch",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::Config(_) => "ConfigError",
            Error::Tape(_) => "TapeError",
            Error::Format(_) => "FormatError",
            Error::CorruptFile(_) => "CorruptFile",
            Error::Io(_) => "IoError",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::BaseModelMismatch { base, artifact } => write!(
                f,
                "{}: artifact fingerprint {artifact:#018x} does not match base model {base:#018x}",
                self.name()
            ),
            Error::Shape(m)
            | Error::Numeric(m)
            | Error::Domain(m)
            | Error::DegenerateInput(m)
            | Error::Config(m)
            | Error::Tape(m)
            | Error::Format(m)
            | Error::CorruptFile(m)
            | Error::Io(m) => write!(f, "{}: {m}", self.name()),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
