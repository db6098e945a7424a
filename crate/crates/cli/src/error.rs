use thiserror::Error;

#[derive(Error, Debug)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] genre_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("missing {what}: {path}")]
    Missing { what: &'static str, path: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    /// Stable category tag used in the one-line error output.
    pub fn kind(&self) -> &'static str {
        use genre_core::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::NonFinite(_) => "non-finite",
                E::Shape(_) => "shape",
                E::InvalidArgument(_) => "invalid-argument",
                E::AcsNotSampled { .. } => "acs",
                E::Empty(_) => "empty",
                E::Diverged { .. } => "diverged",
                E::Format(_) => "format",
                E::Version { .. } => "version",
                E::Truncated(_) => "truncated",
                E::Io(_) => "io",
            },
            CliError::Usage(_) => "usage",
            CliError::Missing { .. } => "missing",
            CliError::Csv(_) => "csv",
            CliError::Image(_) => "image",
            CliError::Io(_) => "io",
        }
    }

    /// `error[kind]: message` with any line breaks folded into spaces.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error[{}]: {msg}", self.kind())
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Checks that `path` exists, naming `what` in the error otherwise.
pub fn require(path: &std::path::Path, what: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing { what, path: path.display().to_string() })
    }
}
