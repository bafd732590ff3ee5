//! Study runner behind the `cp-threshold` command.

pub mod config;
pub mod study;

pub use config::{StudyConfig, StudyKind};
pub use study::{compute_study, run_study, StudyArtifacts, StudyOutput, TOOL_VERSION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

/// Exit code of a study that completed but raised numerical flags.
pub const EXIT_FLAGGED: u8 = 3;
