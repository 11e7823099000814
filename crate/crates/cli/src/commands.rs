//! Command implementations. Every output file is a pure function of the resolved config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use kvrestore::cost::{default_crossover_sweep, fit_cost_models, CalibrationProfile};
use kvrestore::planner::profiled_threshold;
use kvrestore::sim::{simulate, Policy, ReportSummary, SimReport};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CostModelFile, ExperimentConfig};

/// Per-policy files are named after the policy with separators made filename-safe.
pub fn policy_slug(policy: &Policy) -> String {
    policy.to_string().replace([':', '='], "_")
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: &'a ExperimentConfig,
    policies: Vec<ReportSummary>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn simulate_all(config: &ExperimentConfig) -> Result<Vec<SimReport>> {
    let resolved = config.resolve()?;
    config
        .policies
        .par_iter()
        .map(|&policy| Ok(simulate(&resolved.scenario(config, policy))?))
        .collect()
}

fn check_unfinished(config: &ExperimentConfig, reports: &[SimReport]) -> Result<()> {
    for report in reports {
        let total = report.requests.len().max(1) as f64;
        let fraction = report.unfinished.len() as f64 / total;
        ensure!(
            fraction <= config.max_unfinished_fraction,
            "{}: {} of {} requests unfinished at the {}s horizon",
            report.policy,
            report.unfinished.len(),
            report.requests.len(),
            config.horizon_seconds
        );
    }
    Ok(())
}

/// Writes `requests-<policy>.csv`, `trace-<policy>.csv` and `summary.toml` under `out`.
pub fn run(config: &ExperimentConfig, out: &Path) -> Result<Vec<SimReport>> {
    let reports = simulate_all(config)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for report in &reports {
        let slug = policy_slug(&report.policy);
        write(&out.join(format!("requests-{slug}.csv")), &report.requests_csv())?;
        write(&out.join(format!("trace-{slug}.csv")), &report.trace_csv())?;
    }
    let summary = RunSummary {
        config,
        policies: reports.iter().map(SimReport::summary).collect(),
    };
    write(&out.join("summary.toml"), &toml::to_string(&summary)?)?;
    check_unfinished(config, &reports)?;
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    Bandwidth,
    BatchSize,
    Stages,
    ChunkSize,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::Bandwidth => "bandwidth_gbps",
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::Stages => "stages",
            SweepAxis::ChunkSize => "chunk_size",
        }
    }

    fn apply(self, config: &mut ExperimentConfig, value: f64) -> Result<()> {
        let count = || -> Result<usize> {
            ensure!(value >= 1.0 && value.fract() == 0.0, "{} must be a positive integer (got {value})", self.name());
            Ok(value as usize)
        };
        match self {
            SweepAxis::Bandwidth => config.hardware.bandwidth_gbps = value,
            SweepAxis::Stages => config.hardware.stages = count()?,
            SweepAxis::ChunkSize => config.hardware.chunk_size = count()? as u64,
            SweepAxis::BatchSize => match &mut config.workload {
                Some(w) => w.count = count()?,
                None => bail!("batch_size sweeps need a synthetic workload, not a trace"),
            },
        }
        Ok(())
    }
}

/// Runs every (value, policy) point and writes `sweep.csv` with one row per percentile.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[f64], out: &Path) -> Result<String> {
    ensure!(!values.is_empty(), "sweep needs at least one value");
    let points: Vec<ExperimentConfig> = values
        .iter()
        .map(|&v| {
            let mut c = config.clone();
            axis.apply(&mut c, v)?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let groups: Vec<Vec<SimReport>> = points.par_iter().map(simulate_all).collect::<Result<_>>()?;

    let mut csv = String::from("axis,value,policy,percentile,ttft_seconds,mean_ttft_seconds\n");
    for (value, reports) in values.iter().zip(&groups) {
        for report in reports {
            let summary = report.summary();
            let mean = summary.mean_ttft.map(|m| m.to_string()).unwrap_or_default();
            for row in &summary.percentiles {
                writeln!(
                    csv,
                    "{},{value},{},{},{},{mean}",
                    axis.name(),
                    summary.policy,
                    row.percentile,
                    row.ttft
                )?;
            }
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("sweep.csv"), &csv)?;
    for (point, reports) in points.iter().zip(&groups) {
        check_unfinished(point, reports)?;
    }
    Ok(csv)
}

/// Fits a profile and writes `cost-model.toml` with coefficients, residuals and crossover.
pub fn calibrate(config: &ExperimentConfig, profile_path: &Path, out: &Path) -> Result<PathBuf> {
    let profile = CalibrationProfile::load(profile_path)?;
    let fitted = fit_cost_models(&profile).with_context(|| format!("fitting {}", profile_path.display()))?;
    let chunk_size = config.hardware.chunk_size;
    let crossover_tokens = profiled_threshold(
        &config.model,
        &fitted.compute,
        &fitted.io,
        chunk_size,
        &default_crossover_sweep(),
    )?;
    let file = CostModelFile {
        hardware_label: profile.hardware_label,
        chunk_size,
        crossover_tokens,
        fitted,
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("cost-model.toml");
    write(&path, &toml::to_string(&file)?)?;
    Ok(path)
}
