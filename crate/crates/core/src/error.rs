use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("auto-calibration band not fully sampled (row {row})")]
    AcsNotSampled { row: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("NaN encountered in {what} at iteration {iteration}")]
    Diverged { what: String, iteration: u64 },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
