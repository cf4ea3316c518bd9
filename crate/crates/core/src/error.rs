use thiserror::Error;

/// Errors raised by the fusion primitives, geometry and dataset tooling.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes or sizes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A documented precondition of an operation was violated.
    #[error("contract error: {0}")]
    Contract(String),

    /// Geometry that has no well-defined result (zero area, collinear points, singular covariance).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error on line {line}: {message}")]
    Validation { line: usize, message: String },

    /// Unsupported or malformed file format.
    #[error("format error: {0}")]
    Format(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
