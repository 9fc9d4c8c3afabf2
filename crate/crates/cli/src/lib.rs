//! Command-line runner: TOML experiment configs, parallel runs and sweeps,
//! reproducible output directories.

pub mod commands;
pub mod config;
pub mod output;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] fdlab_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_status(&self) -> ExitStatus {
        match self {
            CliError::Config(_) => ExitStatus::ConfigError,
            CliError::Core(fdlab_core::Error::NumericalBlowup { .. }) => {
                ExitStatus::NumericalBlowup
            }
            CliError::Core(_) | CliError::Io(_) => ExitStatus::CheckFailed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    CheckFailed = 1,
    ConfigError = 2,
    NumericalBlowup = 3,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        self as u8
    }
}
