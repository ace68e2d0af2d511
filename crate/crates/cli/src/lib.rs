//! Command-line front end: argument and config parsing, result files and
//! reproducibility manifests.

mod config;
mod output;

pub use config::{parse_cli, Command, Experiment, PartialConfig, RunConfig};
pub use output::{execute, render, write_files, write_outputs, Manifest, RunResult, TOOL};

use pilotwave::ExperimentError;
use std::path::PathBuf;
use thiserror::Error;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "SUBQUANTUM_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    /// `--help` or `--version` output; not a failure.
    #[error("{0}")]
    Help(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Help(_) => 0,
            Self::Usage(_) => 2,
            Self::Experiment(e) if e.is_numerical_abort() => 3,
            Self::Experiment(_) => 2,
            Self::Io { .. } => 4,
        }
    }
}

/// Worker threads requested by [`THREADS_ENV`]; `None` for the default.
pub fn requested_threads(value: Option<&str>) -> Result<Option<usize>, CliError> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => match v.parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(CliError::Usage(format!(
                "invalid value for `{THREADS_ENV}`: expected a thread count, got {v:?}"
            ))),
        },
    }
}
