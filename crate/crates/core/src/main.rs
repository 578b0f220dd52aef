use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod cli;

use cli::{analyze::AnalyzeMode, sweep::SweepKind, CliError};

#[derive(Debug, Parser)]
#[command(name = "nvmux", version, about = "Multiplexed NV-center readout simulation and analysis")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for debug-level logs.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic frame stack plus a ground-truth sidecar.
    SimulateFrames,
    /// Run an analysis pipeline on frames or, for covariance, on a shot-level simulation.
    Analyze {
        #[arg(long, value_enum)]
        mode: AnalyzeMode,
        /// NVFR frame stack.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Ground-truth sidecar; defaults to the one written next to the frames.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Parameter sweep with a checkpoint after every row.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after computing this many new rows (leaves the checkpoint in place).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Weighted Gerchberg-Saxton phase mask for a spot array.
    Holo,
    /// Background-correlation calibration from a null readout run.
    Baseline,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format(|buf, record| writeln!(buf, "level={} {}", record.level().as_str().to_lowercase(), record.args()))
        .init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    let ctx = cli::Context {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
    };
    match cli.command {
        Command::SimulateFrames => cli::simulate::simulate_frames(&ctx),
        Command::Analyze { mode, frames, truth } => cli::analyze::analyze(&ctx, mode, frames, truth),
        Command::Sweep {
            kind,
            resume,
            stop_after,
        } => cli::sweep::sweep(&ctx, kind, resume, stop_after),
        Command::Holo => cli::simulate::holo(&ctx),
        Command::Baseline => cli::simulate::baseline(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("event=failed error=\"{e}\"");
            ExitCode::from(e.exit_code())
        }
    }
}
