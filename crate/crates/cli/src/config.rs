//! Experiment configuration: a TOML file plus command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use kvrestore::cost::{
    default_crossover_sweep, fit_cost_models, CalibrationProfile, ComputeCostModel, FittedModels,
    IoCostModel,
};
use kvrestore::model::{ModelSpec, Request, StagePartition, DEFAULT_CHUNK_SIZE};
use kvrestore::planner::profiled_threshold;
use kvrestore::scheduler::{IoSharing, ResourcePool, RestorationSetup};
use kvrestore::sim::{Policy, Scenario};
use kvrestore::workload::{generate, load_trace, ArrivalProcess, LengthDistribution, WorkloadSpec};
use serde::{Deserialize, Serialize};

/// Where the recompute and transfer cost models come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    /// Inline coefficients; ignored when a profile or fitted file is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compute: Option<ComputeCostModel>,
    /// Raw profile to fit at load time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<PathBuf>,
    /// Output of `kvrestore calibrate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted: Option<PathBuf>,
    #[serde(default)]
    pub per_transfer_overhead: f64,
}

/// Token threshold at or above which requests restore token-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Crossover {
    Tokens(u64),
    Keyword(CrossoverKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossoverKeyword {
    /// Derived from the cost models over power-of-two lengths.
    Profile,
    /// Every request restores token-wise.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    pub bandwidth_gbps: f64,
    #[serde(default = "one")]
    pub io_channels: usize,
    #[serde(default)]
    pub io_sharing: IoSharing,
    #[serde(default = "one")]
    pub stages: usize,
    #[serde(default = "default_chunk")]
    pub chunk_size: u64,
    #[serde(default = "default_crossover")]
    pub crossover: Crossover,
    #[serde(default = "yes")]
    pub include_boundary_cost: bool,
    #[serde(default)]
    pub shared_link: bool,
}

/// Synthetic workload; the experiment seed drives sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub prefix_tokens: LengthDistribution,
    #[serde(default = "default_new_tokens")]
    pub new_tokens: LengthDistribution,
    #[serde(default = "default_arrivals")]
    pub arrivals: ArrivalProcess,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub policies: Vec<Policy>,
    #[serde(default = "default_horizon")]
    pub horizon_seconds: f64,
    /// Largest tolerated fraction of requests left unfinished at the horizon.
    #[serde(default)]
    pub max_unfinished_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub model: ModelSpec,
    pub cost: CostConfig,
    pub hardware: HardwareConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_chunk() -> u64 {
    DEFAULT_CHUNK_SIZE
}
fn default_crossover() -> Crossover {
    Crossover::Keyword(CrossoverKeyword::None)
}
fn default_new_tokens() -> LengthDistribution {
    LengthDistribution::Fixed { tokens: 128 }
}
fn default_arrivals() -> ArrivalProcess {
    ArrivalProcess::FixedBatch
}
fn default_horizon() -> f64 {
    3600.0
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub policies: Vec<Policy>,
    pub bandwidth_gbps: Option<f64>,
    pub stages: Option<usize>,
    pub chunk_size: Option<u64>,
    pub io_channels: Option<usize>,
}

/// Everything a simulation needs, with files loaded and the crossover resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub setup: RestorationSetup,
    pub pool: ResourcePool,
    pub trace: Vec<Request>,
}

impl Default for ExperimentConfig {
    /// 64 long-context requests on a Qwen3-8B-like model over a 10 Gbps link.
    fn default() -> Self {
        Self {
            seed: 7,
            policies: vec![Policy::DEFAULT, Policy::RecomputeOnly, Policy::LoadOnly],
            horizon_seconds: default_horizon(),
            max_unfinished_fraction: 0.0,
            output_dir: None,
            model: ModelSpec::qwen3_8b(),
            cost: CostConfig {
                compute: Some(ComputeCostModel {
                    fixed_overhead: 0.01,
                    linear_coeff: 2.5e-5,
                    quad_coeff: 1.95e-9,
                }),
                profile: None,
                fitted: None,
                per_transfer_overhead: 0.0,
            },
            hardware: HardwareConfig {
                bandwidth_gbps: 10.0,
                io_channels: 1,
                io_sharing: IoSharing::Dedicated,
                stages: 1,
                chunk_size: DEFAULT_CHUNK_SIZE,
                crossover: default_crossover(),
                include_boundary_cost: true,
                shared_link: false,
            },
            workload: Some(WorkloadConfig {
                prefix_tokens: LengthDistribution::Uniform { min: 6000, max: 30_000 },
                new_tokens: default_new_tokens(),
                arrivals: ArrivalProcess::FixedBatch,
                count: 64,
            }),
            trace: None,
        }
    }
}

/// Stored form of a fitted calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModelFile {
    pub hardware_label: String,
    pub chunk_size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossover_tokens: Option<u64>,
    #[serde(flatten)]
    pub fitted: FittedModels,
}

impl CostModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

impl ExperimentConfig {
    /// Parses a file and makes its relative paths relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Self =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.trace,
            &mut config.cost.profile,
            &mut config.cost.fitted,
            &mut config.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if !o.policies.is_empty() {
            self.policies = o.policies.clone();
        }
        if let Some(v) = o.bandwidth_gbps {
            self.hardware.bandwidth_gbps = v;
        }
        if let Some(v) = o.stages {
            self.hardware.stages = v;
        }
        if let Some(v) = o.chunk_size {
            self.hardware.chunk_size = v;
        }
        if let Some(v) = o.io_channels {
            self.hardware.io_channels = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.workload, &self.trace) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => bail!("exactly one of `workload` and `trace` must be set"),
        }
        let files = [&self.trace, &self.cost.profile, &self.cost.fitted];
        for path in files.into_iter().flatten() {
            ensure!(path.is_file(), "file not found: {}", path.display());
        }
        ensure!(
            self.cost.compute.is_some() || self.cost.profile.is_some() || self.cost.fitted.is_some(),
            "cost needs `compute` coefficients, a `profile` or a `fitted` file"
        );
        ensure!(
            self.cost.profile.is_none() || self.cost.fitted.is_none(),
            "set at most one of cost.profile and cost.fitted"
        );
        ensure!(!self.policies.is_empty(), "at least one policy is required");
        ensure!(self.hardware.io_channels >= 1, "io_channels must be >= 1");
        ensure!(
            (0.0..=1.0).contains(&self.max_unfinished_fraction),
            "max_unfinished_fraction must lie in [0, 1]"
        );
        self.model.validate()?;
        Ok(())
    }

    fn cost_models(&self) -> Result<(ComputeCostModel, IoCostModel)> {
        let io = |bandwidth: f64| -> Result<IoCostModel> {
            Ok(IoCostModel::new(bandwidth, self.cost.per_transfer_overhead)?)
        };
        let link = io(self.hardware.bandwidth_gbps * 1e9 / 8.0)?;
        if let Some(path) = &self.cost.profile {
            let fitted = fit_cost_models(&CalibrationProfile::load(path)?)
                .with_context(|| format!("fitting {}", path.display()))?;
            return Ok((fitted.compute, link));
        }
        if let Some(path) = &self.cost.fitted {
            return Ok((CostModelFile::load(path)?.fitted.compute, link));
        }
        let compute = self.cost.compute.expect("validated");
        compute.validate()?;
        Ok((compute, link))
    }

    /// Loads referenced files and builds the restoration setup and request trace.
    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let (compute, io) = self.cost_models()?;
        let hw = &self.hardware;
        let threshold = match hw.crossover {
            Crossover::Tokens(n) => Some(n),
            Crossover::Keyword(CrossoverKeyword::None) => None,
            Crossover::Keyword(CrossoverKeyword::Profile) => {
                // no crossover on the sweep: layer-wise always wins
                profiled_threshold(&self.model, &compute, &io, hw.chunk_size, &default_crossover_sweep())?
                    .or(Some(u64::MAX))
            }
        };
        let setup = RestorationSetup {
            spec: self.model,
            partition: StagePartition::uniform(self.model.num_layers, hw.stages)?,
            compute,
            io,
            chunk_size: hw.chunk_size,
            threshold,
            include_boundary_cost: hw.include_boundary_cost,
            shared_link: hw.shared_link,
        };
        setup.validate()?;
        let trace = match (&self.workload, &self.trace) {
            (Some(w), _) => generate(&WorkloadSpec {
                prefix_tokens: w.prefix_tokens.clone(),
                new_tokens: w.new_tokens.clone(),
                arrivals: w.arrivals,
                count: w.count,
                seed: self.seed,
            })?,
            (None, Some(path)) => load_trace(path)?,
            (None, None) => unreachable!("validated"),
        };
        Ok(Resolved {
            setup,
            pool: ResourcePool {
                io_channels: hw.io_channels,
                sharing: hw.io_sharing,
            },
            trace,
        })
    }
}

impl Resolved {
    pub fn scenario(&self, config: &ExperimentConfig, policy: Policy) -> Scenario {
        Scenario {
            setup: self.setup.clone(),
            pool: self.pool,
            policy,
            trace: self.trace.clone(),
            horizon: config.horizon_seconds,
            seed: config.seed,
        }
    }
}
