//! The `caan` command line: `synth`, `train`, `summarize`, `eval` and
//! `verify`. Every command that writes files also writes a
//! [`RunManifest`] next to them.

pub mod args;
pub mod commands;
pub mod manifest;

use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub use args::{Cli, Command};
pub use manifest::{RunManifest, MANIFEST_FILE};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config files or input data.
    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] caan_core::Error),

    #[error("verification failed: {0}")]
    VerifyFailed(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Core(e) if e.is_validation() => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("output serializes") + "\n";
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs a parsed command line; `argv` is recorded in the manifest.
pub fn run(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a, argv),
        Command::Train(a) => commands::train(&a, argv),
        Command::Summarize(a) => commands::summarize(&a, argv),
        Command::Eval(a) => commands::eval(&a, argv),
        Command::Verify(a) => commands::verify(&a, argv, &mut std::io::stdout()),
    }
}
