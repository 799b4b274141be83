//! Batch experiment harness for the `nilflow` toolkit.
//!
//! Each run reads a [`ExperimentConfig`], writes `<out>/<subcommand>.csv`,
//! appends one JSON line to `<out>/<subcommand>.jsonl`, and maps the outcome
//! to an exit status: 0 success, 2 negative verdict, 1 error.

pub mod config;
mod run;

use std::fs::{self, OpenOptions};
use std::io::Write;

use serde_json::{json, Value};
use thiserror::Error;

pub use config::{parse_config, parse_config_for, ConfigError, ExperimentConfig, SUBCOMMANDS};
pub use run::{convergence_order, run, sine_perturbation, ROUNDOFF_FLOOR};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{message}")]
    Module { kind: &'static str, message: String },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(e) => e.kind(),
            Self::Io { .. } => "Io",
            Self::Module { kind, .. } => kind,
        }
    }

    /// Machine-readable error record.
    pub fn to_json(&self) -> Value {
        json!({"status": "error", "kind": self.kind(), "reason": self.to_string()})
    }

    pub(crate) fn module(kind: &'static str, e: impl std::fmt::Display) -> Self {
        Self::Module {
            kind,
            message: e.to_string(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Result of one subcommand.
#[derive(Debug)]
pub struct Outcome {
    /// `false` for negative verdicts.
    pub positive: bool,
    pub csv: String,
    pub summary: Value,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.positive {
            0
        } else {
            2
        }
    }
}

/// Writes the CSV table and appends the JSON-lines record.
pub fn emit(config: &ExperimentConfig, outcome: &Outcome) -> Result<Value, CliError> {
    let dir = config.out_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let csv = dir.join(format!("{}.csv", config.subcommand));
    fs::write(&csv, &outcome.csv).map_err(|e| CliError::io(&csv, e))?;
    let record = json!({
        "subcommand": config.subcommand,
        "status": if outcome.positive { "ok" } else { "negative" },
        "seed": config.seed(),
        "summary": outcome.summary,
    });
    let jl = dir.join(format!("{}.jsonl", config.subcommand));
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&jl)
        .map_err(|e| CliError::io(&jl, e))?;
    writeln!(f, "{record}").map_err(|e| CliError::io(&jl, e))?;
    Ok(record)
}

/// Runs and emits; returns the exit status and the record printed to stdout.
pub fn execute(config: &ExperimentConfig) -> (i32, Value) {
    match run(config).and_then(|o| Ok((o.exit_code(), emit(config, &o)?))) {
        Ok(r) => r,
        Err(e) => (1, e.to_json()),
    }
}
