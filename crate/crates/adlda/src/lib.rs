//! File formats, run configuration and command implementations for the
//! `adlda` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod datasets;
pub mod parallel;
pub mod stats;

/// Failure classes with a stable exit code each.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("training diverged: {0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl From<adlda_core::Error> for CliError {
    fn from(e: adlda_core::Error) -> Self {
        match e {
            adlda_core::Error::NonFiniteLoss { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<checkpoint::CheckpointError> for CliError {
    fn from(e: checkpoint::CheckpointError) -> Self {
        CliError::Invalid(e.to_string())
    }
}
