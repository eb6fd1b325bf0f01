mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use sgo_core::CoreError;

#[derive(Debug, Parser)]
#[command(name = "sgo", version, about = "Sparse Gaussian occupancy: synthesize, train, evaluate, render, voxelize, benchmark")]
pub struct Cli {
    /// TOML config file; every key has a default (see below).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.lr=0.002`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    /// Replace the contents of an existing output directory.
    #[arg(long, global = true)]
    pub overwrite: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a sequence and write it as a dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset; writes checkpoints, loss curve and metrics.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: voxel occupancy and depth metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one frame's Gaussians into neighbouring frames, with and
    /// without flow, and dump the Gaussians as PLY.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// Relative frame offsets.
        #[arg(long = "t", num_args = 1.., allow_negative_numbers = true, default_values_t = [0])]
        offsets: Vec<i32>,
        /// Flow modes, `on` and/or `off`.
        #[arg(long, num_args = 1.., default_values_t = [String::from("on")])]
        flow: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxelize one frame's prediction on the configured grid.
    Voxelize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cost of induced versus full self-attention over N.
    BenchAttention {
        /// Gaussian counts, ascending; defaults to `bench.n`.
        #[arg(long, num_args = 1..)]
        n: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<settings::ConfigError>() || cause.is::<commands::OutputExists>() {
            return 2;
        }
        if let Some(c) = cause.downcast_ref::<CoreError>() {
            return match c {
                CoreError::Config { .. } => 2,
                CoreError::Missing(_) => 3,
                CoreError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
                CoreError::Diverged { .. } => 4,
                _ => 1,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 3;
            }
        }
    }
    1
}

fn init_threads() -> anyhow::Result<()> {
    let n = match std::env::var("SGO_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| settings::ConfigError { field: "SGO_THREADS".into(), reason: format!("not a count: {v}") })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let help = format!("Config keys and defaults:\n{}", settings::key_listing());
    let matches = Cli::command().after_long_help(help.clone()).after_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let run = || -> anyhow::Result<()> {
        init_threads()?;
        let cfg = settings::load(cli.config.as_deref(), &cli.sets)?;
        commands::run(&cli, cfg)
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
