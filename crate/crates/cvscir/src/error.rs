use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter lies outside the domain of the operation.
    #[error("parameter out of domain: {0}")]
    Domain(String),
    /// The state cannot be used, e.g. an all-zero mass vector.
    #[error("degenerate state: {0}")]
    Degenerate(String),
    /// An MGF argument outside the region where the transform is finite.
    #[error("outside the domain of finiteness: {0}")]
    Divergence(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid data: {0}")]
    Validation(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by numbers rather than by input files.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Degenerate(_) | Error::Divergence(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
