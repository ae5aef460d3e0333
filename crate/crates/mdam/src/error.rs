//! Crate-wide error type.

use crate::glm::GlmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("estimand error: {0}")]
    Estimand(String),
    #[error("{context}: {source}")]
    Glm {
        context: String,
        #[source]
        source: GlmError,
    },
    #[error("pipeline error: {0}")]
    Pipeline(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach pipeline context (e.g. the variable being imputed) to a GLM failure.
    pub(crate) fn glm(context: impl Into<String>) -> impl FnOnce(GlmError) -> Error {
        let context = context.into();
        move |source| Error::Glm { context, source }
    }
}
