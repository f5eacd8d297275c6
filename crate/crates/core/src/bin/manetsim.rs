use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use manetsim_core::harness::{parse_seeds, run_sweep, SweepSpec};
use manetsim_core::metrics::MetricRow;
use manetsim_core::phy::{compute_rx_threshold, PhyParams, CS_TO_RX_RATIO};
use manetsim_core::{run_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "manetsim", version, about = "MANET routing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its metric row.
    Run {
        scenario: PathBuf,
        /// Also print the resolved scenario.
        #[arg(long)]
        echo: bool,
    },
    /// Run a parameter sweep and write result files.
    Sweep {
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds, overriding the sweep file.
        #[arg(long)]
        seeds: Option<String>,
        /// Worker threads (default: all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Derive the receive and carrier-sense thresholds from the radio defaults.
    Thresholds {
        /// Reception probability at the nominal range.
        #[arg(long, default_value_t = 0.95)]
        prob: f64,
        /// Nominal transmission range in meters.
        #[arg(long, default_value_t = 250.0)]
        range: f64,
    },
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

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { scenario, echo } => {
            let cfg = ScenarioConfig::load(&scenario)?;
            if echo {
                for line in cfg.echo().lines() {
                    println!("# {line}");
                }
            }
            let seed = cfg.seed;
            let report = run_scenario(cfg)?;
            println!("{}", MetricRow::CSV_HEADER);
            println!("{}", report.metrics.csv_row(&report.scenario, seed));
        }
        Command::Sweep {
            sweep,
            out,
            seeds,
            jobs,
        } => {
            let mut spec = SweepSpec::load(&sweep)?;
            if let Some(s) = seeds {
                spec.seeds = parse_seeds(&s)?;
            }
            eprintln!("running {} simulations", spec.run_count());
            let result = run_sweep(&spec, jobs)?;
            result.emit_outputs(&out)?;
            print!("{}", result.results_csv());
        }
        Command::Thresholds { prob, range } => {
            if !(prob > 0.0 && prob < 1.0) {
                return Err(format!("probability must be in (0, 1), got {prob}").into());
            }
            let phy = PhyParams::default();
            let rx = compute_rx_threshold(&phy, prob, range)?;
            let cs = rx * CS_TO_RX_RATIO;
            println!("RXThreshold = {rx:.6e} W");
            println!("CSThreshold = {cs:.6e} W");
        }
    }
    Ok(())
}
