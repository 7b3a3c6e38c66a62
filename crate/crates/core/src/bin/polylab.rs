use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use polylab::experiment::{
    cmd_chain, cmd_dist, cmd_oracle, cmd_scan, cmd_simulate, read_pspm, with_workers, workers_from_env,
    ExperimentConfig, OracleOptions,
};
use polylab::PolylabError;

#[derive(Parser)]
#[command(name = "polylab", version, about = "Directed polymer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replica polymers and localization series at one beta.
    Simulate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Free energy and annealed gap over a beta grid.
    Scan {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Exact-identity checks on random small instances.
    Oracle {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        cases: usize,
        #[arg(long, default_value_t = 6)]
        n: u64,
        /// Test hook: deliberately break the named check.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Endpoint-chain trajectory and diagnostics.
    Chain {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Distance between two elements stored as JSON.
    Dist {
        f: PathBuf,
        g: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long)]
        exact: bool,
    },
}

fn run(cli: Cli) -> Result<bool, PolylabError> {
    let workers = workers_from_env()?;
    match cli.command {
        Command::Simulate { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let report = with_workers(workers, || cmd_simulate(&cfg))??;
            println!("{}", report.summary);
        }
        Command::Scan { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let report = with_workers(workers, || cmd_scan(&cfg))??;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
        }
        Command::Chain { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let report = with_workers(workers, || cmd_chain(&cfg))??;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
        }
        Command::Oracle { seed, cases, n, corrupt } => {
            let opts = OracleOptions { seed, cases, n, corrupt };
            let checks = with_workers(workers, || cmd_oracle(&opts))??;
            let ok = checks.iter().all(|c| c.status != "fail");
            println!("{}", serde_json::to_string_pretty(&json!({ "passed": ok, "checks": checks }))?);
            return Ok(ok);
        }
        Command::Dist { f, g, alpha, exact } => {
            let report = cmd_dist(&read_pspm(&f)?, &read_pspm(&g)?, alpha, exact)?;
            println!("{}", serde_json::to_string(&report)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
