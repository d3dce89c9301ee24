mod commands;
mod config;
mod error;
mod output;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use crate::commands::Ctx;
use crate::config::Config;
use crate::error::CliError;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Solve,
    Verify,
    Sweep,
    Rh,
    Dyadic,
    Weights,
}

/// Layer-potential solvers and verification experiments.
#[derive(Parser, Debug)]
#[command(name = "layerpot", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Configuration file (`key = value` lines under `[section]` headers).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Project slightly incompatible Neumann data onto the range instead of failing.
    #[arg(long)]
    auto_project: bool,
}

fn run(args: Args) -> Result<(), CliError> {
    let cfg = Config::load(&args.config)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let ctx = Ctx {
        cfg,
        out: args.out,
        threads: pool.current_num_threads(),
        auto_project: args.auto_project,
    };
    pool.install(|| match args.command {
        Command::Solve => commands::solve::run(&ctx),
        Command::Verify => commands::verify::run(&ctx),
        Command::Sweep => commands::sweep::run(&ctx),
        Command::Rh => commands::analysis::rh(&ctx),
        Command::Dyadic => commands::analysis::dyadic(&ctx),
        Command::Weights => commands::analysis::weights(&ctx),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("layerpot: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
