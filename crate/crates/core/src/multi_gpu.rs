//! Restoration across pipeline stages.
//!
//! Every stage after the first loads the cached hidden states entering its
//! first layer, then restores its own layer slice with the two-pointer race,
//! independently of the other stages.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cost::{ComputeCostModel, IoCostModel};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Request, StagePartition, DEFAULT_CHUNK_SIZE};
use crate::planner::{RestorationPlan, Strategy, UnitCosts};

/// Cached activations at a stage boundary: one hidden vector per prefix token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryActivationModel {
    pub bytes_per_token: u64,
    pub io: IoCostModel,
}

impl BoundaryActivationModel {
    pub fn new(spec: &ModelSpec, io: IoCostModel) -> Self {
        Self {
            bytes_per_token: spec.boundary_bytes_per_token(),
            io,
        }
    }

    pub fn load_time(&self, tokens: u64) -> f64 {
        self.io.cost(tokens * self.bytes_per_token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiGpuOptions {
    pub strategy: Strategy,
    pub chunk_size: u64,
    pub include_boundary_cost: bool,
    /// All stages share one storage link instead of one link per GPU.
    pub shared_link: bool,
}

impl Default for MultiGpuOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::TokenWise,
            chunk_size: DEFAULT_CHUNK_SIZE,
            include_boundary_cost: true,
            shared_link: false,
        }
    }
}

impl MultiGpuOptions {
    pub(crate) fn stage_io(&self, io: &IoCostModel, num_stages: usize) -> IoCostModel {
        if self.shared_link {
            io.shared(num_stages)
        } else {
            *io
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage_index: usize,
    pub layers: Range<usize>,
    pub local_plan: RestorationPlan,
    pub boundary_load_time: f64,
    /// Boundary load followed by the local plan.
    pub stage_finish: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiGpuPlan {
    pub stages: Vec<StagePlan>,
    pub overall_finish: f64,
}

/// Plans one stage on its own; does not depend on any other stage's plan.
pub fn plan_stage(
    request: &Request,
    spec: &ModelSpec,
    partition: &StagePartition,
    stage_index: usize,
    compute: &ComputeCostModel,
    io: &IoCostModel,
    options: &MultiGpuOptions,
) -> Result<StagePlan> {
    let layers = partition
        .ranges()
        .get(stage_index)
        .cloned()
        .ok_or(Error::OutOfRange {
            index: stage_index,
            len: partition.num_stages(),
        })?;
    let io = options.stage_io(io, partition.num_stages());
    let costs = UnitCosts::for_strategy(
        options.strategy,
        request.cached_prefix_tokens,
        options.chunk_size,
        compute,
        &io,
        spec,
        layers.len(),
    )?;
    let local_plan = RestorationPlan::two_pointer(options.strategy, &costs);
    let boundary_load_time = if stage_index > 0 && options.include_boundary_cost {
        BoundaryActivationModel::new(spec, io).load_time(request.cached_prefix_tokens)
    } else {
        0.0
    };
    Ok(StagePlan {
        stage_index,
        layers,
        stage_finish: boundary_load_time + local_plan.predicted_finish,
        local_plan,
        boundary_load_time,
    })
}

fn check_partition(spec: &ModelSpec, partition: &StagePartition) -> Result<()> {
    if partition.num_stages() == 0 {
        return Err(Error::invalid("partition has no stages"));
    }
    if partition.num_layers() != spec.num_layers {
        return Err(Error::invalid(format!(
            "partition covers {} layers but the model has {}",
            partition.num_layers(),
            spec.num_layers
        )));
    }
    Ok(())
}

/// All stages restore concurrently; the request is ready when the slowest stage is.
pub fn plan_multi_gpu(
    request: &Request,
    spec: &ModelSpec,
    partition: &StagePartition,
    compute: &ComputeCostModel,
    io: &IoCostModel,
    options: &MultiGpuOptions,
) -> Result<MultiGpuPlan> {
    check_partition(spec, partition)?;
    let stages = (0..partition.num_stages())
        .map(|s| plan_stage(request, spec, partition, s, compute, io, options))
        .collect::<Result<Vec<_>>>()?;
    let overall_finish = stages.iter().map(|s| s.stage_finish).fold(0.0, f64::max);
    Ok(MultiGpuPlan {
        stages,
        overall_finish,
    })
}

/// Stage `s` starts only after stage `s − 1` has finished restoring.
pub fn sequential_pipeline_baseline(
    request: &Request,
    spec: &ModelSpec,
    partition: &StagePartition,
    compute: &ComputeCostModel,
    io: &IoCostModel,
    options: &MultiGpuOptions,
) -> Result<f64> {
    let plan = plan_multi_gpu(request, spec, partition, compute, io, options)?;
    Ok(chain_finish(plan.stages.iter().map(|s| s.stage_finish)))
}

pub fn chain_finish(stage_finishes: impl IntoIterator<Item = f64>) -> f64 {
    stage_finishes.into_iter().sum()
}

/// Boundary activation bytes relative to the stage's own KV bytes, per stage.
pub fn boundary_vs_kv_ratio(spec: &ModelSpec, partition: &StagePartition) -> Vec<f64> {
    let boundary = spec.boundary_bytes_per_token() as f64;
    partition
        .ranges()
        .iter()
        .map(|r| boundary / spec.kv_bytes_per_token_for_layers(r.len()) as f64)
        .collect()
}
