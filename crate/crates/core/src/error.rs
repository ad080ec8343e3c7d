use std::path::PathBuf;

/// Errors raised anywhere in the lab.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inconsistent construction parameters (shapes, widths, architecture ids).
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller supplied data that violates an operation's preconditions.
    #[error("input error: {0}")]
    Input(String),

    /// Numerical failure during optimisation.
    #[error("training error in `{param}`: {message}")]
    Training { param: String, message: String },

    /// The environment received something outside its contract.
    #[error("environment contract error: {0}")]
    Environment(String),

    /// A task schedule ran out of tasks.
    #[error("stream ended after {0} steps")]
    StreamEnd(u64),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
