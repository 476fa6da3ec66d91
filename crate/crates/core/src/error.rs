use thiserror::Error;

/// Errors raised by the simulator, the agents and the experiment tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("resource kernel {index}: covariance is not positive definite")]
    KernelCovariance { index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A config file entry could not be accepted.
    #[error("line {line}: key `{key}`: {message}")]
    ConfigKey {
        key: String,
        line: usize,
        message: String,
    },

    #[error("stat index {index} out of range for {n} stats")]
    StatIndex { index: usize, n: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cannot sample {requested} transitions from a buffer holding {available}")]
    InsufficientSamples { requested: usize, available: usize },

    #[error("non-finite Q-value encountered during action selection")]
    NonFiniteQ,

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("empty window [{t1}, {t2})")]
    EmptyWindow { t1: usize, t2: usize },

    #[error("nothing to plot: {0}")]
    EmptyResults(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
