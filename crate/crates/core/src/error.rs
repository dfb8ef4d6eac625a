use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph is disconnected: {0}")]
    Disconnected(String),

    #[error("no sensor passed the detection threshold {threshold}")]
    NoSignal { threshold: f64 },

    #[error("estimator diverged at iteration {iteration} (error {error:e})")]
    Diverged { iteration: u64, error: f64 },

    #[error("malformed graph file, line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }
}
