//! Error classification for process exit codes: usage/config problems exit
//! with 2, runtime failures with 1.

use groundloop::config::ConfigError;
use groundloop::evolution::EvolutionError;
use groundloop::synthworld::WorldError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            HarnessError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for HarnessError {
    fn from(e: ConfigError) -> Self {
        HarnessError::Usage(e.to_string())
    }
}

impl From<WorldError> for HarnessError {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::InvalidConfig(_) | WorldError::Infeasible(_) => HarnessError::Usage(e.to_string()),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

impl From<EvolutionError> for HarnessError {
    fn from(e: EvolutionError) -> Self {
        match e {
            EvolutionError::InvalidSchedule(_)
            | EvolutionError::InvalidConfig(_)
            | EvolutionError::HeldOutOverlap(_)
            | EvolutionError::EmptyHeldOut => HarnessError::Usage(e.to_string()),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}
