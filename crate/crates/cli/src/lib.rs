//! `mmfilter` command-line front end.
//!
//! [`run`] is the whole program minus process plumbing, so tests can drive
//! it with in-memory streams. Exit codes: 0 success, 1 data error, 2 usage or
//! configuration error, 3 remote embedding service failure.

pub mod args;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::{BufRead, Write};

use clap::error::ErrorKind;
use clap::Parser;
use mmfilter_core::embedding::EmbedError;
use mmfilter_core::filters::FilterError;
use mmfilter_core::stats::StatsError;
use mmfilter_core::{DataError, ScoreError};
use thiserror::Error;

use crate::args::Cli;
use crate::config::{load_config, ConfigError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_REMOTE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Remote(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Remote(_) => EXIT_REMOTE,
        }
    }

    pub(crate) fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }

    pub(crate) fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    /// `remote_backend` marks runs whose text backend is the HTTP service, so
    /// that a dim mismatch reported by it counts as a service failure.
    pub(crate) fn from_embed(e: &EmbedError, remote_backend: bool, msg: String) -> Self {
        let remote =
            e.is_remote() || (remote_backend && matches!(e, EmbedError::DimMismatch { .. }));
        if remote {
            CliError::Remote(msg)
        } else {
            CliError::Data(msg)
        }
    }

    pub(crate) fn from_score(e: ScoreError, remote_backend: bool) -> Self {
        let msg = e.to_string();
        let mut cur = &e;
        loop {
            match cur {
                ScoreError::Embed { source, .. } => {
                    return Self::from_embed(source, remote_backend, msg)
                }
                ScoreError::Sample { source, .. } => cur = source,
                _ => return CliError::Data(msg),
            }
        }
    }

    pub(crate) fn from_filter(e: FilterError, remote_backend: bool) -> Self {
        match e {
            FilterError::Score(s) => Self::from_score(s, remote_backend),
            FilterError::InvalidSpec(_) | FilterError::Rules(_) | FilterError::MissingProvider => {
                CliError::Usage(e.to_string())
            }
            FilterError::EmptyTable
            | FilterError::AlignmentError(_)
            | FilterError::WordlistIoError { .. } => CliError::Data(e.to_string()),
        }
    }

    pub(crate) fn from_stats(e: StatsError, remote_backend: bool) -> Self {
        match e {
            StatsError::Filter(f) => Self::from_filter(f, remote_backend),
            StatsError::BadBinSpec(_) | StatsError::InvalidSpec(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub fn version_text() -> String {
    format!(
        "mmfilter {}\nembedding sidecar format v{}\n",
        env!("CARGO_PKG_VERSION"),
        mmfilter_core::SIDECAR_FORMAT_VERSION
    )
}

/// Runs one invocation. `env` should hold the process environment (only
/// `MMFILTER_*` entries are consulted).
pub fn run<I, T>(
    argv: I,
    env: &[(String, String)],
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };

    if cli.version {
        let _ = stdout.write_all(version_text().as_bytes());
        return EXIT_OK;
    }

    match execute(cli, env, stdin, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "mmfilter: {e}");
            if let CliError::Usage(_) = e {
                let _ = writeln!(stderr, "Run `mmfilter --help` for usage.");
            }
            e.exit_code()
        }
    }
}

fn execute(
    cli: Cli,
    env: &[(String, String)],
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let flags = cli.overrides().map_err(CliError::Usage)?;
    let env = env.iter().map(|(k, v)| (k.as_str(), v.as_str()));
    let config = load_config(cli.config.as_deref(), &flags, env)?;

    if cli.print_config {
        let text = serde_json::to_string_pretty(&config).expect("config serializes");
        writeln!(stdout, "{text}").map_err(CliError::data)?;
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::usage("no subcommand given"));
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.io.jobs)
        .build()
        .map_err(CliError::usage)?;
    let ctx = commands::Context { config, pool };
    commands::dispatch(&ctx, command, stdin, stdout, stderr)
}
