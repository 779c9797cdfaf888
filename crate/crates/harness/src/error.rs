use std::path::PathBuf;

use gne_core::GneError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Schema violation; `path` is the offending key path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bundles are not comparable: {0}")]
    Comparison(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: GneError,
    },

    #[error("malformed bundle {path}: {message}")]
    Bundle { path: PathBuf, message: String },
}

impl HarnessError {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn bundle(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        HarnessError::Bundle {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code: 2 for certification, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Stage {
                source: GneError::Certification { .. },
                ..
            } => 2,
            HarnessError::Stage {
                source: GneError::Numerical { .. },
                ..
            } => 3,
            _ => 1,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<GneError>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| HarnessError::Stage {
            stage,
            source: e.into(),
        })
    }
}
