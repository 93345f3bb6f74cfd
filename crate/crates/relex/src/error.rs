use std::path::PathBuf;

/// Exit status for configuration problems (missing or unknown keys, bad values).
pub const EXIT_CONFIG: u8 = 2;
/// Exit status for every other failure.
pub const EXIT_FAILURE: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed line in an input file; `line` is 1-based.
    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Core {
        path: PathBuf,
        #[source]
        source: relex_core::Error,
    },
    #[error(transparent)]
    Model(#[from] relex_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Model(relex_core::Error::Config(_)) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}
