//! Command-line surface of pipcdr: `gen-data`, `train`, `sweep`, `eval`.
//!
//! Exit codes are a stable contract: 0 on success, 2 for usage and
//! configuration errors (including malformed or mismatched input files),
//! 1 for failures at run time.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use commands::{cmd_eval, cmd_gen_data, cmd_sweep, cmd_train, EvalReport, SweepRow, TrainSummary};
pub use config::ExperimentConfig;

/// Environment variable consulted when neither `--out` nor `out_dir` is set.
pub const OUT_DIR_ENV: &str = "PIPCDR_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] pipcdr_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use pipcdr_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(
                E::ConfigInvalid(_)
                | E::InvalidArgument(_)
                | E::LengthMismatch { .. }
                | E::Parse { .. }
                | E::RaggedRows { .. }
                | E::TooFewPoints { .. },
            ) => 2,
            CliError::Runtime(_) | CliError::Core(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pipcdr", version, about = "Deep clustering with PIP and CDR")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Experiment config (flat key = value file).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir` in the config and $PIPCDR_OUT_DIR.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (features.csv, labels.csv, manifest.json).
    GenData(RunArgs),
    /// Train and write metrics.csv, summary.json, checkpoints and clusters.
    Train(RunArgs),
    /// Train once per value of one hyperparameter and aggregate sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// One of r, sigma, w, K, queue_capacity.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Run the configurations concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Score predicted labels against ground truth; prints JSON.
    Eval {
        /// Predicted labels, one per line.
        pred: PathBuf,
        /// Ground-truth labels, one per line.
        truth: PathBuf,
    },
}

fn resolve(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            CliError::Usage(format!(
                "no output directory: pass --out, set out_dir in the config, or set {OUT_DIR_ENV}"
            ))
        })?;
    Ok((cfg, out))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(pipcdr_core::Error::from)?;
    println!("{text}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(args) => {
            let (cfg, out) = resolve(&args)?;
            let manifest = cmd_gen_data(&cfg, &out)?;
            eprintln!("wrote {} points ({} dims, {} classes) to {}", manifest.n, manifest.d, manifest.k, out.display());
        }
        Command::Train(args) => {
            let (cfg, out) = resolve(&args)?;
            let summary = cmd_train(&cfg, &out)?;
            report_run(&summary, &out);
        }
        Command::Sweep {
            run,
            param,
            values,
            parallel,
        } => {
            let (cfg, out) = resolve(&run)?;
            let rows = cmd_sweep(&cfg, &param, &values, &out, parallel)?;
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            for r in rows.iter().filter(|r| r.result.is_err()) {
                if let Err(e) = &r.result {
                    eprintln!("{} = {} failed: {e}", r.param, r.value);
                }
            }
            eprintln!("{} runs, {failed} failed; see {}", rows.len(), out.join("sweep.csv").display());
            if failed == rows.len() {
                return Err(CliError::Runtime("every sweep run failed".into()));
            }
        }
        Command::Eval { pred, truth } => {
            let report = cmd_eval(&pred, &truth)?;
            print_json(&report)?;
        }
    }
    Ok(())
}

fn report_run(summary: &TrainSummary, out: &Path) {
    match &summary.final_metrics {
        Some(m) => eprintln!(
            "{} epochs in {:.1}s: acc {:.4} nmi {:.4} ari {:.4}; outputs in {}",
            summary.epochs_run,
            summary.wall_clock_secs,
            m.acc,
            m.nmi,
            m.ari,
            out.display()
        ),
        None => eprintln!("0 epochs; outputs in {}", out.display()),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
