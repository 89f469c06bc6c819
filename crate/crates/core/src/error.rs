use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("regime violation: {0}")]
    Regime(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("singular information matrix (null direction along {0})")]
    Singular(String),

    #[error("tolerance not met: {0}")]
    Tolerance(String),

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("unreliable experiment: {0}")]
    Unreliable(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Regime(_) => 3,
            Error::Unreliable(_) => 4,
            Error::Io { .. } | Error::Internal(_) => 1,
            _ => 2,
        }
    }
}
