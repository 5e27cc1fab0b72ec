//! `adt`: every pipeline stage as a subcommand with JSON output.
//!
//! Exit codes: 0 success, 2 input parse error, 3 data integrity error,
//! 4 config error, 5 I/O error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use adt_core::{Error, ErrorKind};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "adt",
    version,
    about = "Aerial detection dataset and evaluation toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every randomized selection.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Reject out-of-bounds annotation boxes instead of clamping them.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Class and labelled/unlabelled image statistics.
    Stats(commands::StatsArgs),
    /// Split images into overlapping patches.
    Tile(commands::TileArgs),
    /// Convert between COCO JSON and YOLO text labels.
    Convert(commands::ConvertArgs),
    /// Partition classes into frequent/common/rare groups.
    Group(commands::GroupArgs),
    /// Class-balanced proposal sampling.
    Sample(commands::SampleArgs),
    /// Per-annotation crowding density.
    Density(commands::DensityArgs),
    /// COCO-protocol detection evaluation.
    Eval(commands::EvalArgs),
    /// Evaluate focal loss values.
    Focal(commands::FocalArgs),
}

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Parse => 2,
        ErrorKind::Integrity => 3,
        ErrorKind::Config => 4,
        ErrorKind::Io => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADT_LOG", "warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(4);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("global pool configured once");
    }

    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
