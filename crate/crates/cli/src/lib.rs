//! The `ccmtune` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 backend failure,
//! 3 non-finite loss, 4 invalid matrix, 5 bind failure.

pub mod args;
pub mod backend;
pub mod commands;

use std::ffi::OsString;
use std::process::ExitCode;

use ccmtune_core::ccm::CcmError;
use ccmtune_core::embedding::EmbedError;
use ccmtune_core::objective::ObjectiveError;
use ccmtune_core::TuneError;
use clap::Parser;
use thiserror::Error;

pub use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("{0}")]
    NonFinite(String),
    #[error("invalid matrix: {0}")]
    Matrix(String),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Backend(_) => 2,
            CliError::NonFinite(_) => 3,
            CliError::Matrix(_) => 4,
            CliError::Bind { .. } => 5,
        }
    }

    pub(crate) fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Config(m) => CliError::Usage(m),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<TuneError> for CliError {
    fn from(e: TuneError) -> Self {
        match e {
            TuneError::Backend(b) => b.into(),
            TuneError::NonFiniteLoss { .. } => CliError::NonFinite(e.to_string()),
            // Degenerate embeddings come from the backend.
            TuneError::Objective(ObjectiveError::ZeroNorm | ObjectiveError::DimensionMismatch(..)) => {
                CliError::Backend(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<CcmError> for CliError {
    fn from(e: CcmError) -> Self {
        CliError::Matrix(e.to_string())
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
