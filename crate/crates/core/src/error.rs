use thiserror::Error;

/// Errors raised by the spectral laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    /// Order fitting hit an exactly zero error, which happens for schemes that
    /// are exact on the given model (e.g. zero nonlinearity).
    #[error("degenerate error data: {0}")]
    DegenerateErrors(String),

    #[error("replica {stream_id} failed: {source}")]
    Replica {
        stream_id: u64,
        #[source]
        source: Box<LabError>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::InvalidArgument(msg.into()))
}
