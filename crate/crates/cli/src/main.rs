//! `fedsim`: run experiment files, compare metric logs, replicate the bundled
//! scenarios.
//!
//! Exit status: 0 on success, 1 on a runtime failure (or a failed scenario
//! check), 2 on a usage or configuration error.

mod compare;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsim_core::scenarios;

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Deterministic federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every matrix point of an experiment file for one or more seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, applied after the file and FEDSIM_SEED (repeatable).
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Number of consecutive seeds starting at `seed` (default: the file's `seeds`).
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Tabulate final accuracy, resource and wastage of two or more logs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        logs: Vec<PathBuf>,
        /// Report time and resource to reach this test accuracy.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Run a bundled scenario and check it against its frozen bands.
    Replicate { name: String },
}

pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn replicate(name: &str) -> Result<(), Failure> {
    if !scenarios::NAMES.contains(&name) {
        return Err(Failure::Usage(anyhow::anyhow!(
            "unknown scenario {name:?}; valid names: {}",
            scenarios::NAMES.join(", ")
        )));
    }
    let report = scenarios::run_scenario(name).map_err(|e| Failure::Runtime(e.into()))?;
    println!(
        "{:<10} {:>9} {:>8} {:>8} {:>12} {:>10}",
        "arm", "final_acc", "wastage", "unique", "resource_s", "time_s"
    );
    for a in &report.arms {
        println!(
            "{:<10} {:>9.4} {:>8.3} {:>8.3} {:>12.1} {:>10.1}",
            a.label, a.final_accuracy, a.wastage_ratio, a.unique_rate, a.resource_s, a.sim_time_s
        );
    }
    for c in &report.checks {
        println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.label);
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!("scenario {name} failed its checks")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            overrides,
            out,
            seeds,
        } => run::run(&run::RunArgs {
            config,
            overrides,
            out,
            seeds,
        }),
        Command::Compare { logs, target } => compare::compare(&logs, target)
            .map(|table| print!("{table}"))
            .map_err(Failure::Usage),
        Command::Replicate { name } => replicate(&name),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
