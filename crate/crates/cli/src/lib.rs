//! Command-line front end: problem documents, reports, simulation output and
//! instance generation.

pub mod commands;
pub mod document;
pub mod generate;

use thiserror::Error;

pub use commands::{run, Cli};
pub use document::{parse_problem, ProblemDocument, ReportDocument};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("malformed document: {0}")]
    Document(String),
    #[error("invalid problem: {0}")]
    Core(#[from] singlq::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Uncertified(String),
}

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_UNDECIDED: i32 = 2;

/// Installs the logger; `SINGLQ_LOG` selects quiet, info or debug.
pub fn init_logging() {
    let level = match std::env::var("SINGLQ_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Error,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}
