use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Pipeline stages wrap inner errors with a stage
/// name so CLI diagnostics point at the failing step.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty evaluation set: no ground-truth pixels outside the seed set")]
    EmptyEvaluationSet,

    #[error("empty label column space: no superpixel received a seed label")]
    EmptyLabelColumnSpace,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
