//! `cpr`: plan checkpoint strategies, simulate failures and train the toy
//! model under them.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cpr_core::checkpoint::Strategy;
use cpr_core::failure::{Family, MtbfCounting};

use commands::{Context, SweepAxis};

#[derive(Debug, Parser)]
#[command(name = "cpr", version, about = "Checkpointing with partial recovery for embedding training")]
struct Cli {
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = "cpr-out")]
    out: PathBuf,
    /// Overrides the config's manifest seed.
    #[arg(long, global = true, env = "CPR_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit failure-time distributions to a trace; rows sorted by survival RMSE.
    FitTrace {
        trace: PathBuf,
        /// Comma-separated families (gamma, weibull, exponential, lognormal).
        #[arg(long, value_delimiter = ',')]
        families: Vec<Family>,
        /// Use every inter-failure gap of a job instead of only its first failure.
        #[arg(long)]
        all_failures: bool,
    },
    /// Compare full and partial recovery and pick one.
    Plan {
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long)]
        target_pls: Option<f64>,
        /// Hours partial recovery must save to be chosen.
        #[arg(long)]
        margin: Option<f64>,
        /// Print the resolved config instead of a plan.
        #[arg(long)]
        print_config: bool,
    },
    /// Monte-Carlo simulation of each strategy; writes runs.csv and summary.txt.
    Simulate {
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long = "strategy")]
        strategies: Vec<Strategy>,
    },
    /// Parameter sweeps; writes sweep_<axis>.csv.
    Sweep {
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// target-pls, failures or nodes.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long)]
        seeds: Option<usize>,
        /// Also train this many seeds per target-PLS cell and report AUC degradation.
        #[arg(long)]
        coupled_seeds: Option<usize>,
        /// Node counts for the nodes axis.
        #[arg(long, value_delimiter = ',')]
        nodes: Vec<u32>,
    },
    /// Train the toy model under simulated failures; writes train.csv.
    Train {
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long = "strategy")]
        strategies: Vec<Strategy>,
    },
    /// Summarize the CSV artifacts of a directory into report.txt.
    Report { dir: PathBuf },
}

fn run(cli: Cli) -> error::Result<()> {
    let ctx = Context {
        out: cli.out,
        seed: cli.seed,
    };
    match cli.command {
        Command::FitTrace {
            trace,
            families,
            all_failures,
        } => {
            let counting = if all_failures {
                MtbfCounting::AllFailures
            } else {
                MtbfCounting::FirstFailure
            };
            commands::fit_trace(&ctx, &trace, &families, counting)
        }
        Command::Plan {
            config,
            target_pls,
            margin,
            print_config,
        } => commands::plan(&ctx, config.as_deref(), target_pls, margin, print_config),
        Command::Simulate {
            config,
            seeds,
            strategies,
        } => commands::simulate(&ctx, config.as_deref(), seeds, &strategies),
        Command::Sweep {
            config,
            axis,
            seeds,
            coupled_seeds,
            nodes,
        } => commands::sweep(&ctx, config.as_deref(), axis, seeds, coupled_seeds, &nodes),
        Command::Train {
            config,
            seeds,
            strategies,
        } => commands::train(&ctx, config.as_deref(), seeds, &strategies),
        Command::Report { dir } => commands::report(&ctx, &dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
