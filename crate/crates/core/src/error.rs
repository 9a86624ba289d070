use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes, layouts or hyperparameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called outside its contract (e.g. stepping a terminal state).
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data that does not fit the environment (invalid transition, bad reward).
    #[error("data error: {0}")]
    Data(String),

    #[error("training error: {0}")]
    Training(String),

    /// Carries a text dump of the offending batch.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64, dump: String },

    #[error("non-finite gradient at index {index}: {value}")]
    NonFiniteGradient { index: usize, value: f64 },

    #[error("oracle unavailable: {needed} states exceed the enumeration cap of {cap}")]
    OracleUnavailable { needed: u128, cap: u128 },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("reward table has no entry for sequence {0:?}")]
    MissingReward(String),

    /// Indicates a bug, e.g. a trajectory longer than the environment allows.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
