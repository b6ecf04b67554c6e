use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid transfer function: {0}")]
    InvalidTransferFunction(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("covariance matrix not positive definite after jitter {jitter:e} (n = {n})")]
    NotPositiveDefinite { n: usize, jitter: f64 },

    #[error("trace length {got} does not match dataset length {expected}")]
    TraceLength { expected: usize, got: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("experiment failed at real iteration {iteration}: {source}")]
    Experiment {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}
