//! Experiment orchestration behind the `guifl` binary: config loading,
//! the five subcommands and the files they leave in a run directory.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("incomplete run in {dir}: {missing} not found")]
    IncompleteRun { dir: PathBuf, missing: String },
    #[error("runs use different corpora: {first} vs {other} ({dir})")]
    CorpusMismatch { first: String, other: String, dir: PathBuf },
}

impl CliError {
    /// Process exit status: 1 config, 2 data, 3 run failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) | CliError::IncompleteRun { .. } | CliError::CorpusMismatch { .. } => 2,
            CliError::Run(_) | CliError::Io { .. } => 3,
        }
    }
}
