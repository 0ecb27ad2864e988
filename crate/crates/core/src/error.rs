use thiserror::Error;

/// Config loading and validation failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid value at `{path}`: {reason}")]
    Invalid { path: String, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

impl ConfigError {
    pub fn invalid(path: &str, reason: &str) -> Self {
        Self::Invalid { path: path.to_string(), reason: reason.to_string() }
    }
}

/// Solver-level failures surfaced to callers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("infeasible input: {0}")]
    Infeasible(String),
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
