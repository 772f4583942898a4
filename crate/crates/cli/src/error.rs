use std::fmt;
use std::path::Path;

use domino::csvio::CsvError;
use domino::env::EnvError;
use domino::qtraj::QuantumError;
use domino::sac::{CheckpointError, TrainError};

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Io(_) => 4,
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Errors raised while an episode runs. Configuration problems are caught
/// by validation before any run starts.
impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Dynamics(_) | EnvError::Reward(_) => Self::Numerical(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<QuantumError> for CliError {
    fn from(e: QuantumError) -> Self {
        match e {
            QuantumError::CutoffTooSmall { .. } | QuantumError::StepTooLarge { .. } | QuantumError::Reward(_) => {
                Self::Numerical(e.to_string())
            }
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => Self::Config(m),
            TrainError::Env(_) | TrainError::Diverged { .. } => Self::Numerical(e.to_string()),
        }
    }
}

pub fn checkpoint_error(path: &Path, e: CheckpointError) -> CliError {
    match e {
        CheckpointError::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("{}: {other}", path.display())),
    }
}

pub fn csv_error(path: &Path, e: CsvError) -> CliError {
    CliError::io(path, e)
}
