use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record that failed to parse. `line` is 1-based; 0 means the whole file.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown {kind} `{phrase}`")]
    Unknown { kind: &'static str, phrase: String },

    #[error("no candidates left to sample from: {0}")]
    EmptyCandidates(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("metric error: {0}")]
    Metric(String),

    /// Non-finite values in a numerical computation.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An error raised inside a named pipeline stage.
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by bad input data rather than the environment.
    pub fn is_data_error(&self) -> bool {
        !matches!(self.root(), Error::Io { .. } | Error::Config(_) | Error::Numerical(_))
    }
}
