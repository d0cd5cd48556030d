use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("persistence error at {path}: {reason}")]
    Persistence { path: PathBuf, reason: String },
    #[error("synthesis error (batch {batch}, step {step}): non-finite loss {components}")]
    Synthesis {
        batch: usize,
        step: usize,
        components: String,
    },
    #[error("training error: {0}")]
    Training(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn persistence(path: &Path, reason: impl ToString) -> Self {
        Error::Persistence {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn at_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }
}
