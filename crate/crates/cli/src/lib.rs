//! Command-line front end: file-based access to every fusion primitive, synthetic
//! paired-modality data, and the toy fusion experiment.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod plot;
pub mod rng;
pub mod synth;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or input files; exit code 1.
    #[error("{0}")]
    Input(String),

    /// Filesystem failure while reading or writing.
    #[error("io error: {0}")]
    Io(String),

    /// Failure inside a computation, such as divergence; exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<osfuse_core::error::Error> for CliError {
    fn from(e: osfuse_core::error::Error) -> Self {
        use osfuse_core::error::Error as E;
        match e {
            E::Parse { .. } | E::Validation { .. } | E::Format(_) | E::Input(_) => {
                CliError::Input(e.to_string())
            }
            E::Io(m) => CliError::Io(m),
            E::Dimension(_) | E::Contract(_) | E::Degenerate(_) => CliError::Runtime(e.to_string()),
        }
    }
}
