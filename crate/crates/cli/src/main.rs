#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Overrides;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "liqtimer", version, about = "Optimal liquidation timing for credit derivatives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price the claim under the market and investor measures
    Price(RunArgs),
    /// Tabulate the drift G of the delayed liquidation premium
    Drift(RunArgs),
    /// Solve the premium problem and write surface, boundary and G = 0 locus
    Solve(RunArgs),
    /// Solve and write only the stopping boundaries
    Boundary(RunArgs),
    /// Simulate state paths and estimate the market price
    Simulate(RunArgs),
    /// Cross-check prices and the optimal strategy value by Monte Carlo
    Verify(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.dir`
    #[arg(long, env = "LIQTIMER_OUT")]
    out: Option<PathBuf>,
    /// Monte Carlo seed, overriding `mc.seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo path count, overriding `mc.paths`
    #[arg(long)]
    paths: Option<usize>,
    /// Worker threads; results do not depend on it
    #[arg(long, env = "LIQTIMER_THREADS")]
    threads: Option<usize>,
}

fn run(cli: Cli) -> CliResult<()> {
    let (cmd, args): (fn(&config::Run) -> CliResult<commands::Report>, &RunArgs) = match &cli.command {
        Command::Price(a) => (commands::price, a),
        Command::Drift(a) => (commands::drift, a),
        Command::Solve(a) => (commands::solve, a),
        Command::Boundary(a) => (commands::boundary, a),
        Command::Simulate(a) => (commands::simulate, a),
        Command::Verify(a) => (commands::verify, a),
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let overrides = Overrides {
        out: args.out.clone(),
        seed: args.seed,
        paths: args.paths,
    };
    let run = config::load(&args.config, &overrides)?;
    println!("config {} (hash {}, seed {})", args.config.display(), run.hash, run.seed());
    let report = cmd(&run)?;
    print!("{}", report.text);
    for f in &report.files {
        println!("wrote {f}");
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
