//! `kvrestore`: run, compare and sweep restoration policies, and calibrate cost models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{ensure, Result};
use clap::{Args, Parser, Subcommand};
use kvrestore::sim::{Policy, SimReport};

use commands::SweepAxis;
use config::{ExperimentConfig, Overrides};

const DEFAULT_OUT: &str = "kvrestore-out";

#[derive(Parser)]
#[command(name = "kvrestore", version, about = "KV-cache restoration planner and serving simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate each configured policy and write its reports.
    Run(Common),
    /// Like `run`, but requires at least two policies.
    Compare(Common),
    /// Repeat a run over values of one parameter and write a combined CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Fit cost models to a profile and write them with the derived crossover length.
    Calibrate {
        profile: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; built-in long-context defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `output_dir` from the config, else `kvrestore-out`).
    #[arg(long, env = "KVRESTORE_OUT")]
    out: Option<PathBuf>,
    /// Policy to simulate; repeat for several. Replaces the config's list.
    #[arg(long = "policy")]
    policies: Vec<Policy>,
    #[arg(long)]
    bandwidth_gbps: Option<f64>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    chunk_size: Option<u64>,
    #[arg(long)]
    io_channels: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        config.apply(&Overrides {
            seed: self.seed,
            policies: self.policies.clone(),
            bandwidth_gbps: self.bandwidth_gbps,
            stages: self.stages,
            chunk_size: self.chunk_size,
            io_channels: self.io_channels,
        });
        let out = self
            .out
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Ok((config, out))
    }
}

fn print_reports(reports: &[SimReport]) {
    println!("{:<36} {:>10} {:>10} {:>10} {:>8} {:>8}", "policy", "mean_ttft", "p50", "p99", "gpu", "io");
    for r in reports {
        let s = r.summary();
        let pct = |p: f64| {
            s.percentiles
                .iter()
                .find(|row| row.percentile == p)
                .map_or(f64::NAN, |row| row.ttft)
        };
        println!(
            "{:<36} {:>10.3} {:>10.3} {:>10.3} {:>7.1}% {:>7.1}%",
            s.policy,
            s.mean_ttft.unwrap_or(f64::NAN),
            pct(0.5),
            pct(0.99),
            s.restoration_compute_utilization * 100.0,
            s.restoration_io_utilization * 100.0
        );
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let (config, out) = common.load()?;
            print_reports(&commands::run(&config, &out)?);
            println!("wrote {}", out.display());
        }
        Command::Compare(common) => {
            let (config, out) = common.load()?;
            ensure!(config.policies.len() >= 2, "compare needs at least two policies");
            print_reports(&commands::run(&config, &out)?);
            println!("wrote {}", out.display());
        }
        Command::Sweep { common, axis, values } => {
            let (config, out) = common.load()?;
            commands::sweep(&config, axis, &values, &out)?;
            println!("wrote {}", out.join("sweep.csv").display());
        }
        Command::Calibrate { profile, common } => {
            let (config, out) = common.load()?;
            let path = commands::calibrate(&config, &profile, &out)?;
            print!("{}", std::fs::read_to_string(&path)?);
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
