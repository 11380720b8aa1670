use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{CommandFactory, Parser, Subcommand};

mod commands;
mod config;
mod family;

use commands::{EntropyArgs, FitArgs, GapArgs, GenDataArgs, MissingOption, Outcome, SweepArgs};

/// Offline domain randomization toolkit.
#[derive(Parser)]
#[command(name = "odr", version)]
struct Cli {
    /// JSON file with option values; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect an offline dataset from the real system.
    GenData(GenDataArgs),
    /// Fit a parameter distribution to a dataset.
    Fit(FitArgs),
    /// Fit across dataset sizes and trials.
    #[command(name = "sweep-consistency", alias = "sweep")]
    Sweep(SweepArgs),
    /// Compare uniform and fitted priors on finite MDP classes.
    #[command(name = "eval-gap", alias = "gap")]
    Gap(GapArgs),
    /// Closed-form Gaussian entropy against a Monte Carlo estimate.
    EntropyDemo(EntropyArgs),
}

const SECTIONS: &[&str] = &[
    "gen-data",
    "fit",
    "sweep-consistency",
    "eval-gap",
    "entropy-demo",
];

fn with_file<T>(cli_config: &Option<PathBuf>, section: &str, flags: &T) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let file = cli_config
        .as_ref()
        .map(|p| config::load_section(p, section, SECTIONS))
        .transpose()?;
    config::resolve(flags, file)
}

fn run(cli: &Cli) -> Result<Outcome> {
    if let Ok(threads) = std::env::var("ODR_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| anyhow::anyhow!("ODR_THREADS must be a positive integer"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match &cli.command {
        Command::GenData(a) => commands::gen_data(&with_file(&cli.config, "gen-data", a)?),
        Command::Fit(a) => commands::fit_cmd(&with_file(&cli.config, "fit", a)?),
        Command::Sweep(a) => commands::sweep_cmd(&with_file(&cli.config, "sweep-consistency", a)?),
        Command::Gap(a) => commands::gap_cmd(&with_file(&cli.config, "eval-gap", a)?),
        Command::EntropyDemo(a) => {
            commands::entropy_cmd(&with_file(&cli.config, "entropy-demo", a)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) if outcome.failures.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            let record = serde_json::json!({ "status": "failed", "failures": outcome.failures });
            eprintln!("{record}");
            ExitCode::from(3)
        }
        Err(e) if e.downcast_ref::<MissingOption>().is_some() => {
            let mut cmd = Cli::command();
            let name = cmd
                .get_subcommands()
                .find(|c| {
                    std::env::args()
                        .any(|a| a == c.get_name() || c.get_all_aliases().any(|al| al == a))
                })
                .map(|c| c.get_name().to_string());
            let mut sub = match name {
                Some(n) => cmd
                    .find_subcommand_mut(&n)
                    .expect("subcommand exists")
                    .clone()
                    .bin_name(format!("odr {n}")),
                None => cmd,
            };
            sub.error(clap::error::ErrorKind::MissingRequiredArgument, e)
                .exit()
        }
        Err(e) => {
            let record = serde_json::json!({ "status": "error", "message": format!("{e:#}") });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
