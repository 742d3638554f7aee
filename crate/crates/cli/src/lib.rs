//! Experiment runner for the `varsim` binary: TOML configs, CSV/JSON
//! metrics, SVG charts and run comparison.

pub mod compare;
pub mod config;
pub mod report;
pub mod run;

/// Failure of a subcommand, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config or missing inputs (exit code 2).
    #[error("{0}")]
    Invalid(String),
    /// Anything that went wrong while running (exit code 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}
