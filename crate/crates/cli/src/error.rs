use std::path::Path;

use detec_core::Error as CoreError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const INFEASIBLE: i32 = 2;
    pub const VALIDATION: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Simulation(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn file(path: &Path, msg: impl std::fmt::Display) -> Self {
        CliError::File {
            path: path.display().to_string(),
            msg: msg.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::File { .. } => exit::VALIDATION,
            CliError::Simulation(_) => exit::NUMERICAL,
            CliError::Core(e) => match e {
                CoreError::Infeasible { .. } => exit::INFEASIBLE,
                CoreError::SolverLimit { .. }
                | CoreError::NonFinite { .. }
                | CoreError::EigenNoConvergence
                | CoreError::Verification { .. }
                | CoreError::Singular(_)
                | CoreError::NotPositiveDefinite(_)
                | CoreError::NotSymmetric { .. } => exit::NUMERICAL,
                CoreError::Dimension { .. }
                | CoreError::RankDeficient { .. }
                | CoreError::Invalid(_)
                | CoreError::Parse(_)
                | CoreError::Io(_)
                | CoreError::Csv(_)
                | CoreError::Json(_) => exit::VALIDATION,
            },
        }
    }
}
