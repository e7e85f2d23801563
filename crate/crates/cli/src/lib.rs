//! The `gedi` command-line tool: trains single runs, ablation tables and
//! loss-weight sweeps, evaluates checkpoints and renders SVG plots.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when a
//! run fails (for example an SGLD divergence).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod svg;

use config::ConfigArgs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<gedi::Error> for CliError {
    fn from(e: gedi::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

#[derive(Parser, Debug)]
#[command(name = "gedi", version, about = "Generative-discriminative clustering experiments on toy 2-D data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model and write metrics, summary, checkpoint and plots.
    Train(TrainArgs),
    /// Train every variant over several seeds and tabulate test NMI.
    Ablate(AblateArgs),
    /// Grid over the invariance and prior weights; writes a CSV and heat map.
    Sweep(SweepArgs),
    /// Report NMI and collapse diagnostics of a checkpoint.
    Eval(EvalArgs),
    /// Re-render the plots of a finished run directory.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory (default runs/DATASET-VARIANT-sSEED).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated variants, in table column order.
    #[arg(long, default_value = "jem,swav,no-unif,no-inv,no-gen,gedi")]
    pub variants: String,
    /// Replicates per variant.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Worker threads (default: available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory (default runs/ablate-DATASET).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated weights used for both axes.
    #[arg(long, default_value = "0,10,20,30,40,50")]
    pub grid: String,
    /// Replicates per grid cell.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory (default runs/sweep-DATASET).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run directory holding config.snapshot and checkpoint.bin.
    #[arg(long, conflicts_with = "checkpoint")]
    pub run: Option<PathBuf>,
    /// Checkpoint file; the datasets come from the config flags.
    #[arg(long, required_unless_present = "run")]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Run directory holding config.snapshot and checkpoint.bin.
    #[arg(long)]
    pub run: PathBuf,
    /// Where to write the plots (default: the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let env_seed = std::env::var(config::SEED_ENV).ok();
    match commands::dispatch(cli.command, env_seed.as_deref()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
