use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pfsim_cli::artifacts::load_scenario;
use pfsim_cli::simulate::{simulate, SimulateOptions};
use pfsim_cli::{report, sweep, Result, LOG_ENV};

/// Simulates opportunistic, device-to-device sharing of preference data.
#[derive(Debug, Parser)]
#[command(name = "pfsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write metrics.csv, events.jsonl and summary.json.
    Simulate {
        /// Scenario file or preset name (bulk-1000, four-device, transit,
        /// pedestrian-pass, cafe, two-communities).
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Run this many ticks instead of the scenario duration.
        #[arg(long)]
        ticks: Option<u64>,
        /// Also write the report and SVG plots.
        #[arg(long)]
        plots: bool,
    },
    /// Run every grid point for every seed and write sweep.csv.
    Sweep {
        #[arg(long)]
        scenario: String,
        /// JSON file (or inline JSON) mapping dotted keys to value lists,
        /// e.g. {"filter.k": [1, 5, 10]}.
        #[arg(long, default_value = "{}")]
        grid: String,
        /// Seed range: `a..b` (exclusive), `a..=b` or a single seed.
        #[arg(long, default_value = "0..1")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ticks: Option<u64>,
    },
    /// Summarize run directories into report.md and SVG plots.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, seed, out, ticks, plots } => {
            let config = load_scenario(&scenario)?;
            let summary = simulate(&config, &SimulateOptions { seed, ticks, plots }, &out)?;
            println!(
                "{}: {} sessions, {} successful, {} bytes -> {}",
                summary.scenario,
                summary.sessions_opened,
                summary.success(),
                summary.bytes_exchanged,
                out.display()
            );
        }
        Command::Sweep { scenario, grid, seeds, out, ticks } => {
            let config = load_scenario(&scenario)?;
            let grid = sweep::load_grid(&grid)?;
            let seeds = sweep::parse_seeds(&seeds)?;
            let rows = sweep::sweep(&config, &grid, seeds, ticks)?;
            sweep::write_sweep(&out, &grid, &rows)?;
            println!("{} rows -> {}", rows.len(), out.join(sweep::SWEEP_FILE).display());
        }
        Command::Report { dirs } => {
            print!("{}", report::report(&dirs)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
