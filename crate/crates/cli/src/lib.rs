//! Command-line and HTTP front end for `setseq`.

use std::path::PathBuf;

pub mod api;
pub mod commands;

pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_INPUT: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("input file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}", .0.body.message)]
    Api(api::ApiError),
    #[error(transparent)]
    Core(#[from] setseq::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(setseq::Error::Config(_)) => EXIT_USAGE,
            CliError::MissingFile(_) => EXIT_MISSING_INPUT,
            _ => EXIT_ERROR,
        }
    }

    pub fn kind(&self) -> &str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingFile(_) => "missing_input",
            CliError::Io { .. } => "io",
            CliError::Api(e) => &e.body.error,
            CliError::Core(setseq::Error::Config(_)) => "usage",
            CliError::Core(_) => "error",
        }
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/service.md")]
mod service_chapter {}
