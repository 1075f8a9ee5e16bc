//! Experiment runner: loads a JSON config, runs one subcommand and writes
//! `steps.csv` plus `summary.json`. Outputs depend only on config and seed.

pub mod config;
pub mod experiments;
pub mod output;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use blackbox_lds::Phase;
use clap::Parser;
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

pub use config::{ExperimentConfig, Subcommand};
use experiments::{run_experiment, RunOutput};
use output::{to_json_bytes, write_steps};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("{phase}: {source}")]
    Runtime {
        phase: Phase,
        #[source]
        source: blackbox_lds::Error,
    },

    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Keeps the phase the library attached, else uses `fallback`.
    pub fn runtime(source: blackbox_lds::Error, fallback: Phase) -> Self {
        match source {
            blackbox_lds::Error::InPhase { phase, source } => Self::Runtime { phase, source: *source },
            source => Self::Runtime { phase: fallback, source },
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Schema { .. } => 2,
            Self::Runtime { .. } | Self::Io { .. } => 1,
        }
    }

    /// Machine-readable form written to stderr and `error.json`.
    pub fn to_json(&self) -> Value {
        let body = match self {
            Self::Schema { path, message } => json!({ "kind": "schema", "path": path, "message": message }),
            Self::Runtime { phase, source } => json!({ "kind": "runtime", "phase": phase.label(), "message": source.to_string() }),
            Self::Io { path, source } => json!({ "kind": "io", "path": path, "message": source.to_string() }),
        };
        json!({ "error": body, "exit_code": self.exit_code() })
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "blackbox-lds", version, about = "Black-box control experiments on simulated linear systems")]
pub struct Args {
    #[arg(value_enum)]
    pub subcommand: Subcommand,
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted-path edit of the config, e.g. `overrides.eps=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Independent runs with seeds `seed, seed + 1, ...`, written to `trial_<i>/`.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let csv_path = dir.join(&cfg.output.steps_csv);
    let file = fs::File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    let total = write_steps(BufWriter::new(file), &out.rows).map_err(|e| CliError::io(&csv_path, e.into()))?;
    debug_assert_eq!(Some(total), out.summary["cumulative_cost"].as_f64());
    write_bytes(&dir.join(&cfg.output.summary_json), &to_json_bytes(&out.summary))?;
    let stale = dir.join("error.json");
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| CliError::io(&stale, e))?;
    }
    Ok(())
}

fn record_error(dir: &Path, err: &CliError) {
    if fs::create_dir_all(dir).is_ok() {
        // best effort: the error also goes to stderr
        let _ = fs::write(dir.join("error.json"), to_json_bytes(&err.to_json()));
    }
}

/// Runs one experiment into `dir`, leaving `error.json` there on failure.
fn run_into(dir: &Path, cmd: Subcommand, loaded: &config::LoadedConfig, seed: Option<u64>) -> Result<(), CliError> {
    let result = run_experiment(cmd, &loaded.config, seed, &loaded.flag_keys).and_then(|out| write_run(dir, &loaded.config, &out));
    if let Err(e) = &result {
        record_error(dir, e);
    }
    result
}

pub fn execute(args: &Args) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let mut loaded = config::load(&text, &args.sets)?;
    if args.seed.is_some() {
        loaded.config.seed = args.seed;
    }
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from(&loaded.config.output.dir));
    if let Err(e) = loaded.config.validate_for(args.subcommand) {
        record_error(&dir, &e);
        return Err(e);
    }
    if args.trials == 0 {
        let e = CliError::Schema {
            path: "--trials".into(),
            message: "must be at least 1".into(),
        };
        record_error(&dir, &e);
        return Err(e);
    }
    let seed = loaded.config.seed;
    if args.trials == 1 {
        return run_into(&dir, args.subcommand, &loaded, seed);
    }
    let results: Vec<(usize, Option<u64>, Result<(), CliError>)> = (0..args.trials)
        .into_par_iter()
        .map(|i| {
            let s = seed.map(|s| s.wrapping_add(i as u64));
            (i, s, run_into(&dir.join(format!("trial_{i}")), args.subcommand, &loaded, s))
        })
        .collect();
    let index: Vec<Value> = results
        .iter()
        .map(|(i, s, r)| match r {
            Ok(()) => json!({ "trial": i, "seed": s, "status": "ok" }),
            Err(e) => json!({ "trial": i, "seed": s, "status": "error", "error": e.to_json()["error"] }),
        })
        .collect();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_bytes(&dir.join("trials.json"), &to_json_bytes(&index))?;
    match results.into_iter().find_map(|(_, _, r)| r.err()) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Parses `argv`, runs, reports failures as JSON on stderr and returns the exit status.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let err = CliError::Schema {
                path: "<argv>".into(),
                message: e.to_string().trim().to_string(),
            };
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match execute(&args) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
