//! Experiment orchestration behind the `unfold` binary: spec files, the
//! built-in presets, and the train / eval / generate commands.

pub mod commands;
pub mod spec;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad spec file, bad flags or unusable inputs. Exit code 2.
    #[error("{0}")]
    Spec(String),

    /// The computation itself failed. Exit code 1.
    #[error(transparent)]
    Run(#[from] unfold_core::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec(_) => 2,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}
