use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use unav_cli::{cmd_bench, cmd_gen, cmd_run, exit_code, parse_algorithm, print_summary, RunArgs};
use unav_core::Algorithm;

#[derive(Parser)]
#[command(name = "unav", version, about = "Unlabeled multi-agent navigation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random scenario files for a map.
    Gen {
        #[arg(long)]
        map: PathBuf,
        /// Number of scenario files.
        #[arg(long, default_value_t = 150)]
        count: usize,
        /// Start/goal pairs per scenario.
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one scenario.
    Run {
        #[arg(long)]
        scen: PathBuf,
        #[arg(long, value_parser = parse_algorithm)]
        algo: Option<Algorithm>,
        /// Use only the first N start/goal pairs.
        #[arg(long)]
        n: Option<usize>,
        /// JSON run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Per-step CSV trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Result document (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a benchmark sweep described by a JSON spec.
    Bench {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (defaults to the available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
        /// Add a wall-clock column to the CSV.
        #[arg(long)]
        timing: bool,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Gen { map, count, n, seed, out } => {
            let written = cmd_gen(&map, count, n, seed, &out)?;
            eprintln!("wrote {} scenario(s) to {}", written.len(), out.display());
            Ok(0)
        }
        Command::Run { scen, algo, n, config, trace, out } => {
            let result = cmd_run(&RunArgs {
                scenario: &scen,
                algorithm: algo,
                n,
                config: config.as_deref(),
                trace: trace.as_deref(),
                out: out.as_deref(),
            })?;
            Ok(exit_code(&result) as u8)
        }
        Command::Bench { spec, out, jobs, timing } => {
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let summary = cmd_bench(&spec, &out, jobs, timing)?;
            print_summary(&summary, std::io::stdout().lock())?;
            Ok(0)
        }
    }
}
