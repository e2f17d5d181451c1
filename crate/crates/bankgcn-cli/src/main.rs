//! Command-line front end: training runs, checkpoint evaluation, frequency
//! response export, the randomized property suite, and dataset utilities.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime fault,
//! 3 property-check failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "bankgcn", version, about = "Graph filter-bank convolution networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Plain-text config file with dotted keys (`train.gamma = 0.1`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Override train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override outputs.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(self.config.as_deref(), &self.overrides, self.seed, self.out.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more runs; writes checkpoints, history, and a summary.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on a dataset split; prints JSON.
    Eval {
        /// Checkpoint to load.
        checkpoint: PathBuf,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Export one layer's filter frequency responses as CSV.
    ExportResponse {
        /// Checkpoint to load.
        checkpoint: PathBuf,
        /// Layer whose filters to export.
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// Grid resolution over the eigenvalue range [0, 2].
        #[arg(long, default_value_t = 256)]
        points: usize,
        /// Output directory for the CSV files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the randomized property suite; exits 3 if any check fails.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb one analytic gradient so the gradient check must fail;
        /// proves the harness is live.
        #[arg(long)]
        fd_fault: bool,
    },
    /// Write the synthetic frequency-separation dataset in TU format.
    GenSynthetic(ConfigArgs),
    /// Print dataset statistics and model parameter counts as JSON.
    InspectDataset(ConfigArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Train(args) => commands::train(&args.load()?)?,
        Command::Eval { checkpoint, args } => commands::eval(&checkpoint, &args.load()?)?,
        Command::ExportResponse { checkpoint, layer, points, out } => {
            commands::export_response(&checkpoint, layer, points, &out)?
        }
        Command::Check { seed, fd_fault } => {
            if !commands::check(seed, fd_fault) {
                return Ok(ExitCode::from(3));
            }
        }
        Command::GenSynthetic(args) => commands::gen_synthetic(&args.load()?)?,
        Command::InspectDataset(args) => commands::inspect_dataset(&args.load()?)?,
    }
    Ok(ExitCode::SUCCESS)
}
