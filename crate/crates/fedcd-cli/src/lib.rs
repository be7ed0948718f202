//! Experiment harness: strict TOML configuration, orchestration of
//! single runs, strategy comparisons, and parameter sweeps.

pub mod config;
pub mod experiment;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<fedcd_core::Error> for CliError {
    fn from(err: fedcd_core::Error) -> Self {
        use fedcd_core::Error as E;
        match err {
            E::InvalidConfig(_)
            | E::InvalidSpec(_)
            | E::InvalidArchetype(_)
            | E::PoolExhausted { .. }
            | E::EmptyShardSplit { .. }
            | E::DatasetParse { .. } => CliError::Config(err.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
