mod commands;
mod config;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tofa::{PlacementPolicy, TorusDims};

use config::ConfigArgs;

/// Topology- and fault-aware process placement on 3D tori.
#[derive(Debug, Parser)]
#[command(name = "tofa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build traffic matrices and a heatmap from a trace or synthetic pattern.
    Ingest(ConfigArgs),
    /// Place a job and report mapping quality.
    Map(ConfigArgs),
    /// Simulate batches of job instances under node failures.
    Simulate(ConfigArgs),
    /// Compare policies across torus arrangements with equal node counts.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Torus arrangements to compare.
    #[arg(long, value_delimiter = ',', value_name = "DXxDYxDZ,...")]
    arrangements: Vec<TorusDims>,
    /// Policies to compare (default: all).
    #[arg(long, value_delimiter = ',')]
    policies: Vec<PlacementPolicy>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a.resolve()?),
        Command::Map(a) => commands::map(&a.resolve()?),
        Command::Simulate(a) => commands::simulate(&a.resolve()?),
        Command::Sweep(a) => {
            let mut c = a.common.resolve()?;
            if !a.arrangements.is_empty() {
                c.arrangements = a.arrangements;
            }
            if !a.policies.is_empty() {
                c.policies = a.policies;
            }
            commands::sweep(&c)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
