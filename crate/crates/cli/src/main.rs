use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nilflow_cli::{execute, parse_config_for, CliError, ExperimentConfig, SUBCOMMANDS};

/// Runs one nilflow experiment and writes `<out>/<subcommand>.csv` and
/// `<out>/<subcommand>.jsonl`.
///
/// Exit status: 0 success, 2 negative verdict, 1 error.
/// NILFLOW_THREADS caps the number of worker threads.
#[derive(Parser, Debug)]
#[command(name = "nilflow", version)]
struct Args {
    #[arg(value_parser = SUBCOMMANDS)]
    subcommand: String,
    /// `key = value` configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Extra `key=value` settings, applied after the file.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<String>,
    #[arg(long)]
    perturbation_file: Option<PathBuf>,
    #[arg(long)]
    cutoff: Option<String>,
}

fn load(args: &Args) -> Result<ExperimentConfig, CliError> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })?,
        None => String::new(),
    };
    let mut cfg = parse_config_for(&args.subcommand, &text)?;
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or(nilflow_cli::ConfigError::Syntax { line: 0 })?;
        cfg.set(k.trim(), v, 0)?;
    }
    if let Some(mu) = &args.mu {
        cfg.set("mu", mu, 0)?;
    }
    if let Some(p) = &args.perturbation_file {
        cfg.set("perturbation_file", &p.display().to_string(), 0)?;
    }
    if let Some(c) = &args.cutoff {
        cfg.set("cutoff", c, 0)?;
    }
    if let Some(o) = &args.out {
        cfg.set("out", &o.display().to_string(), 0)?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = std::env::var("NILFLOW_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let (code, record) = match load(&args) {
        Ok(cfg) => execute(&cfg),
        Err(e) => (1, e.to_json()),
    };
    println!("{record}");
    ExitCode::from(code as u8)
}
