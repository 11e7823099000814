//! Single-request restoration planning.
//!
//! A request's prefix is split into units (token chunks or layers). A compute
//! side recomputes units from the front while an I/O side loads units from the
//! back; the two sides meet somewhere in the middle so that every unit is
//! restored exactly once. Each side keeps claiming its next unit only while it
//! would finish that unit no later than the other side could finish everything
//! still unclaimed on its own.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cost::{crossover_threshold, ComputeCostModel, IoCostModel};
use crate::error::{Error, Result};
use crate::model::{Chunking, ModelSpec, Request};

/// Restoration axis for a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    TokenWise,
    LayerWise,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::TokenWise => "token-wise",
            Strategy::LayerWise => "layer-wise",
        })
    }
}

/// Which resource restores a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Recompute,
    Load,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Recompute => "recompute",
            Side::Load => "load",
        })
    }
}

/// Per-unit recompute and load latencies of one request (or one stage slice of it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitCosts {
    pub compute: Vec<f64>,
    pub io: Vec<f64>,
}

impl UnitCosts {
    pub fn new(compute: Vec<f64>, io: Vec<f64>) -> Result<Self> {
        if compute.len() != io.len() {
            return Err(Error::invalid(format!(
                "unit cost lists differ in length ({} vs {})",
                compute.len(),
                io.len()
            )));
        }
        if compute.iter().chain(&io).any(|c| !(*c >= 0.0)) {
            return Err(Error::invalid("unit costs must be >= 0"));
        }
        Ok(Self { compute, io })
    }

    /// Chunk units over `layers` of the model's layers. Compute is the marginal
    /// cost of each chunk given all earlier chunks; I/O moves the chunk's KV for
    /// those layers in one transfer.
    pub fn token_wise(
        chunking: &Chunking,
        compute: &ComputeCostModel,
        io: &IoCostModel,
        spec: &ModelSpec,
        layers: usize,
    ) -> Self {
        let fraction = layers as f64 / spec.num_layers as f64;
        let bytes_per_token = spec.kv_bytes_per_token_for_layers(layers);
        let mut c = Vec::with_capacity(chunking.num_chunks);
        let mut i = Vec::with_capacity(chunking.num_chunks);
        for k in 0..chunking.num_chunks {
            let from = chunking.tokens_before(k);
            let to = chunking.tokens_before(k + 1);
            c.push(fraction * compute.extension_cost(from, to));
            i.push(io.cost((to - from) * bytes_per_token));
        }
        Self { compute: c, io: i }
    }

    /// One unit per layer; every layer costs `1/L` of the full recompute and moves
    /// the whole prefix's KV for that layer.
    pub fn layer_wise(
        prefix_tokens: u64,
        compute: &ComputeCostModel,
        io: &IoCostModel,
        spec: &ModelSpec,
        layers: usize,
    ) -> Self {
        if prefix_tokens == 0 {
            return Self {
                compute: Vec::new(),
                io: Vec::new(),
            };
        }
        let per_layer_compute = (1.0 / spec.num_layers as f64) * compute.cost(prefix_tokens);
        let per_layer_io = io.cost(prefix_tokens * spec.kv_bytes_per_token_layer());
        Self {
            compute: vec![per_layer_compute; layers],
            io: vec![per_layer_io; layers],
        }
    }

    pub fn for_strategy(
        strategy: Strategy,
        prefix_tokens: u64,
        chunk_size: u64,
        compute: &ComputeCostModel,
        io: &IoCostModel,
        spec: &ModelSpec,
        layers: usize,
    ) -> Result<Self> {
        Ok(match strategy {
            Strategy::TokenWise => {
                let chunking = Chunking::new(prefix_tokens, chunk_size)?;
                Self::token_wise(&chunking, compute, io, spec, layers)
            }
            Strategy::LayerWise => Self::layer_wise(prefix_tokens, compute, io, spec, layers),
        })
    }

    pub fn len(&self) -> usize {
        self.compute.len()
    }

    pub fn is_empty(&self) -> bool {
        self.compute.is_empty()
    }

    pub fn total_compute(&self) -> f64 {
        range_sum(&self.compute, 0..self.len())
    }

    pub fn total_io(&self) -> f64 {
        range_sum(&self.io, 0..self.len())
    }

    pub fn max_unit(&self) -> f64 {
        self.compute
            .iter()
            .chain(&self.io)
            .copied()
            .filter(|c| c.is_finite())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn range_sum(costs: &[f64], range: Range<usize>) -> f64 {
    costs[range].iter().sum()
}

/// I/O takes a unit only if it finishes no later than compute could finish all
/// remaining units. Ties go to I/O.
pub(crate) fn io_should_claim(io_start: f64, io_unit: f64, compute_finish_all: f64) -> bool {
    io_start + io_unit <= compute_finish_all
}

/// Compute takes a unit only if it finishes strictly before I/O could load all
/// remaining units.
pub(crate) fn compute_should_claim(compute_start: f64, compute_unit: f64, io_finish_all: f64) -> bool {
    compute_start + compute_unit < io_finish_all
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub unit: usize,
    pub side: Side,
    pub start: f64,
    pub end: f64,
}

/// A contiguous recompute/load split with its predicted execution timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorationPlan {
    pub strategy: Strategy,
    pub assignments: Vec<Side>,
    /// First unit restored by loading; equals the unit count when nothing is loaded.
    pub meeting_point: usize,
    pub predicted_finish: f64,
    pub timeline: Vec<TimelineEntry>,
}

impl RestorationPlan {
    /// Plans `costs` with the two-pointer race.
    pub fn two_pointer(strategy: Strategy, costs: &UnitCosts) -> Self {
        let n = costs.len();
        let mut slots: Vec<Option<Side>> = vec![None; n];
        let mut timeline = Vec::with_capacity(n);
        let (mut lo, mut hi) = (0usize, n);
        let (mut t_comp, mut t_io) = (0.0f64, 0.0f64);

        while lo < hi {
            let io_finish_all = t_io + range_sum(&costs.io, lo..hi);
            let compute_finish_all = t_comp + range_sum(&costs.compute, lo..hi);
            let io_ok = io_should_claim(t_io, costs.io[hi - 1], compute_finish_all);
            let comp_ok = compute_should_claim(t_comp, costs.compute[lo], io_finish_all);
            let io_first = t_io <= t_comp;
            let side = match (io_ok, comp_ok) {
                (true, true) if io_first => Side::Load,
                (true, true) => Side::Recompute,
                (true, false) => Side::Load,
                (false, true) => Side::Recompute,
                (false, false) => {
                    if t_io + costs.io[hi - 1] <= t_comp + costs.compute[lo] {
                        Side::Load
                    } else {
                        Side::Recompute
                    }
                }
            };
            match side {
                Side::Load => {
                    hi -= 1;
                    let end = t_io + costs.io[hi];
                    timeline.push(TimelineEntry {
                        unit: hi,
                        side,
                        start: t_io,
                        end,
                    });
                    t_io = end;
                    slots[hi] = Some(side);
                }
                Side::Recompute => {
                    let end = t_comp + costs.compute[lo];
                    timeline.push(TimelineEntry {
                        unit: lo,
                        side,
                        start: t_comp,
                        end,
                    });
                    t_comp = end;
                    slots[lo] = Some(side);
                    lo += 1;
                }
            }
        }
        let predicted_finish = timeline.iter().map(|e| e.end).fold(0.0, f64::max);
        Self {
            strategy,
            assignments: slots.into_iter().map(|s| s.expect("every unit claimed")).collect(),
            meeting_point: lo,
            predicted_finish,
            timeline,
        }
    }

    pub fn num_units(&self) -> usize {
        self.assignments.len()
    }

    /// Structured text record (TOML) for golden files and inspection.
    pub fn to_record(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    pub fn from_record(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("bad plan record: {e}")))
    }
}

/// `max(split/n · T_comp, (n − split)/n · T_io)`.
pub fn envelope_time(total_compute: f64, total_io: f64, num_units: usize, split: usize) -> Result<f64> {
    if num_units == 0 {
        return Err(Error::invalid("num_units must be >= 1"));
    }
    if split > num_units {
        return Err(Error::OutOfRange {
            index: split,
            len: num_units + 1,
        });
    }
    let n = num_units as f64;
    let recompute = split as f64 / n * total_compute;
    let load = (num_units - split) as f64 / n * total_io;
    Ok(recompute.max(load))
}

/// Continuous optimum of the recompute/load envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptimum {
    /// Fraction of units (from the front) recomputed: `T_io / (T_comp + T_io)`.
    pub split_fraction: f64,
    /// `T_comp·T_io / (T_comp + T_io)`, half the harmonic mean.
    pub optimal_time: f64,
    /// Set when both totals are zero.
    pub degenerate: bool,
}

impl SplitOptimum {
    pub fn optimal_split(&self, num_units: usize) -> f64 {
        self.split_fraction * num_units as f64
    }
}

pub fn closed_form_optimum(total_compute: f64, total_io: f64) -> SplitOptimum {
    let sum = total_compute + total_io;
    if sum == 0.0 {
        return SplitOptimum {
            split_fraction: 0.0,
            optimal_time: 0.0,
            degenerate: true,
        };
    }
    if total_io.is_infinite() {
        return SplitOptimum {
            split_fraction: 1.0,
            optimal_time: total_compute,
            degenerate: false,
        };
    }
    if total_compute.is_infinite() {
        return SplitOptimum {
            split_fraction: 0.0,
            optimal_time: total_io,
            degenerate: false,
        };
    }
    SplitOptimum {
        split_fraction: total_io / sum,
        optimal_time: total_compute * total_io / sum,
        degenerate: false,
    }
}

fn check_prefix(request: &Request) -> Result<()> {
    if request.cached_prefix_tokens == 0 {
        return Err(Error::invalid(format!(
            "request {} has no cached prefix to restore",
            request.id
        )));
    }
    Ok(())
}

pub fn plan_token_wise(
    request: &Request,
    chunking: &Chunking,
    compute: &ComputeCostModel,
    io: &IoCostModel,
    spec: &ModelSpec,
) -> Result<RestorationPlan> {
    check_prefix(request)?;
    if chunking.prefix_tokens != request.cached_prefix_tokens {
        return Err(Error::invalid(format!(
            "chunking covers {} tokens but request {} caches {}",
            chunking.prefix_tokens, request.id, request.cached_prefix_tokens
        )));
    }
    let costs = UnitCosts::token_wise(chunking, compute, io, spec, spec.num_layers);
    Ok(RestorationPlan::two_pointer(Strategy::TokenWise, &costs))
}

pub fn plan_layer_wise(
    request: &Request,
    spec: &ModelSpec,
    compute: &ComputeCostModel,
    io: &IoCostModel,
) -> Result<RestorationPlan> {
    check_prefix(request)?;
    let costs = UnitCosts::layer_wise(request.cached_prefix_tokens, compute, io, spec, spec.num_layers);
    Ok(RestorationPlan::two_pointer(Strategy::LayerWise, &costs))
}

/// Token-wise at or above the threshold, layer-wise below it. Without a
/// threshold every request goes token-wise.
pub fn select_strategy(prefix_tokens: u64, threshold: Option<u64>) -> Strategy {
    match threshold {
        Some(t) if prefix_tokens < t => Strategy::LayerWise,
        _ => Strategy::TokenWise,
    }
}

/// Exhaustive search over contiguous splits: units `< s` recomputed, `≥ s` loaded.
/// Returns the smallest minimizing `s` and its finish time.
pub fn brute_force_best_split(compute: &[f64], io: &[f64]) -> Result<(usize, f64)> {
    if compute.is_empty() || compute.len() != io.len() {
        return Err(Error::invalid("unit cost lists must be nonempty and of equal length"));
    }
    let n = compute.len();
    let mut best = (0usize, f64::INFINITY);
    for s in 0..=n {
        let finish = range_sum(compute, 0..s).max(range_sum(io, s..n));
        if finish < best.1 {
            best = (s, finish);
        }
    }
    Ok(best)
}

/// Crossover length from profiled planner curves: the first sweep length at
/// which token-wise planning predicts a finish no later than layer-wise.
pub fn profiled_threshold(
    spec: &ModelSpec,
    compute: &ComputeCostModel,
    io: &IoCostModel,
    chunk_size: u64,
    sweep: &[u64],
) -> Result<Option<u64>> {
    Chunking::new(0, chunk_size)?;
    let token = |n: u64| {
        let chunking = Chunking::new(n, chunk_size).expect("chunk size checked");
        let costs = UnitCosts::token_wise(&chunking, compute, io, spec, spec.num_layers);
        RestorationPlan::two_pointer(Strategy::TokenWise, &costs).predicted_finish
    };
    let layer = |n: u64| {
        let costs = UnitCosts::layer_wise(n, compute, io, spec, spec.num_layers);
        RestorationPlan::two_pointer(Strategy::LayerWise, &costs).predicted_finish
    };
    crossover_threshold(token, layer, sweep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use crate::model::make_chunking;
    use proptest::prelude::*;
    use proptest::strategy::Strategy as _;

    fn costs(c: &[f64], i: &[f64]) -> UnitCosts {
        UnitCosts::new(c.to_vec(), i.to_vec()).unwrap()
    }

    #[test]
    fn envelope_examples() {
        assert_eq!(envelope_time(300.0, 100.0, 32, 0).unwrap(), 100.0);
        assert_eq!(envelope_time(300.0, 100.0, 32, 32).unwrap(), 300.0);
        assert_eq!(envelope_time(300.0, 100.0, 32, 8).unwrap(), 75.0);
        assert!(envelope_time(1.0, 1.0, 0, 0).is_err());
        assert!(envelope_time(1.0, 1.0, 4, 5).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let o = closed_form_optimum(10.0, 10.0);
        assert_eq!((o.split_fraction, o.optimal_time), (0.5, 5.0));
        let o = closed_form_optimum(300.0, 100.0);
        assert_eq!((o.split_fraction, o.optimal_time), (0.25, 75.0));
        assert_eq!(o.optimal_split(32), 8.0);
        let o = closed_form_optimum(300.0, 0.0);
        assert_eq!((o.split_fraction, o.optimal_time, o.degenerate), (0.0, 0.0, false));
        let o = closed_form_optimum(0.0, 0.0);
        assert!(o.degenerate);
        assert_eq!((o.split_fraction, o.optimal_time), (0.0, 0.0));
    }

    #[test]
    fn brute_force_examples() {
        let (s, f) = brute_force_best_split(&[300.0 / 32.0; 32], &[100.0 / 32.0; 32]).unwrap();
        assert_eq!(s, 8);
        assert!((f - 75.0).abs() < 1e-9);
        assert_eq!(brute_force_best_split(&[1.0; 4], &[0.0; 4]).unwrap(), (0, 0.0));
        assert_eq!(
            brute_force_best_split(&[1.0, 2.0, 3.0, 4.0], &[2.0; 4]).unwrap(),
            (2, 4.0)
        );
        assert!(brute_force_best_split(&[], &[]).is_err());
        assert!(brute_force_best_split(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn hand_stepped_token_race() {
        let plan = RestorationPlan::two_pointer(Strategy::TokenWise, &costs(&[1.0, 2.0, 3.0, 4.0], &[2.0; 4]));
        assert_eq!(plan.predicted_finish, 4.0);
        assert_eq!(plan.meeting_point, 2);
        use Side::*;
        assert_eq!(plan.assignments, vec![Recompute, Recompute, Load, Load]);
        let oracle = brute_force_best_split(&[1.0, 2.0, 3.0, 4.0], &[2.0; 4]).unwrap();
        assert_eq!(oracle.1, plan.predicted_finish);
    }

    #[test]
    fn hand_stepped_layer_race() {
        let plan = RestorationPlan::two_pointer(Strategy::LayerWise, &costs(&[1.0; 4], &[3.0; 4]));
        assert_eq!(plan.predicted_finish, 3.0);
        assert_eq!(plan.meeting_point, 3);
        assert_eq!(brute_force_best_split(&[1.0; 4], &[3.0; 4]).unwrap(), (3, 3.0));
    }

    #[test]
    fn symmetric_layer_race_meets_in_middle() {
        for l in 1..=64usize {
            let plan = RestorationPlan::two_pointer(Strategy::LayerWise, &costs(&vec![1.0; l], &vec![1.0; l]));
            assert_eq!(plan.meeting_point, l / 2, "L={l}");
            assert_eq!(plan.predicted_finish, l.div_ceil(2) as f64);
        }
    }

    #[test]
    fn disabled_io_recomputes_everything() {
        let c = [0.5, 1.0, 1.5];
        let plan = RestorationPlan::two_pointer(Strategy::TokenWise, &costs(&c, &[f64::INFINITY; 3]));
        assert!(plan.assignments.iter().all(|&s| s == Side::Recompute));
        assert_eq!(plan.predicted_finish, 3.0);
        assert_eq!(plan.meeting_point, 3);
    }

    #[test]
    fn single_unit_goes_to_faster_side() {
        let plan = RestorationPlan::two_pointer(Strategy::TokenWise, &costs(&[1.0], &[2.0]));
        assert_eq!(plan.assignments, vec![Side::Recompute]);
        let plan = RestorationPlan::two_pointer(Strategy::TokenWise, &costs(&[2.0], &[1.0]));
        assert_eq!(plan.assignments, vec![Side::Load]);
        let plan = RestorationPlan::two_pointer(Strategy::TokenWise, &costs(&[1.0], &[1.0]));
        assert_eq!(plan.assignments, vec![Side::Load]);
    }

    #[test]
    fn planners_from_models() {
        let spec = ModelSpec::qwen3_8b();
        let compute = ComputeCostModel::new(0.01, 2.5e-5, 1.95e-9).unwrap();
        let io = IoCostModel::from_gbps(10.0).unwrap();
        let req = Request::new(0, 0.0, 20_000, 16).unwrap();
        let chunking = make_chunking(20_000, 512).unwrap();
        let tok = plan_token_wise(&req, &chunking, &compute, &io, &spec).unwrap();
        assert_eq!(tok.num_units(), 40);
        assert!(tok.predicted_finish < compute.cost(20_000));
        let lay = plan_layer_wise(&req, &spec, &compute, &io).unwrap();
        assert_eq!(lay.num_units(), 36);
        let opt = closed_form_optimum(compute.cost(20_000), io.cost(spec.kv_bytes(20_000)));
        assert!(lay.predicted_finish >= opt.optimal_time - 1e-12);
        let wrong = make_chunking(100, 512).unwrap();
        assert!(plan_token_wise(&req, &wrong, &compute, &io, &spec).is_err());
        let empty = Request::new(1, 0.0, 0, 1).unwrap();
        assert!(plan_layer_wise(&empty, &spec, &compute, &io).is_err());
    }

    #[test]
    fn layer_race_with_io_disabled() {
        let spec = ModelSpec::qwen3_8b();
        let compute = ComputeCostModel::new(0.01, 2.5e-5, 1.95e-9).unwrap();
        let c = UnitCosts::layer_wise(4096, &compute, &IoCostModel::new(1.0, 0.0).unwrap(), &spec, 36);
        let disabled = UnitCosts::new(c.compute.clone(), vec![f64::INFINITY; 36]).unwrap();
        let plan = RestorationPlan::two_pointer(Strategy::LayerWise, &disabled);
        assert_eq!(plan.meeting_point, 36);
        assert!((plan.predicted_finish - compute.cost(4096)).abs() < 1e-12);
    }

    #[test]
    fn strategy_threshold() {
        assert_eq!(select_strategy(4096, Some(1024)), Strategy::TokenWise);
        assert_eq!(select_strategy(512, Some(1024)), Strategy::LayerWise);
        assert_eq!(select_strategy(1024, Some(1024)), Strategy::TokenWise);
        assert_eq!(select_strategy(3, None), Strategy::TokenWise);
        let flips = (0..4096u64)
            .map(|n| select_strategy(n, Some(1500)))
            .collect::<Vec<_>>()
            .windows(2)
            .filter(|w| w[0] != w[1])
            .count();
        assert_eq!(flips, 1);
    }

    #[test]
    fn profiled_threshold_finds_crossing() {
        let spec = ModelSpec::qwen3_8b();
        let compute = ComputeCostModel::new(0.01, 2.5e-5, 1.95e-9).unwrap();
        let io = IoCostModel::from_gbps(10.0).unwrap();
        let sweep = crate::cost::default_crossover_sweep();
        let t = profiled_threshold(&spec, &compute, &io, 512, &sweep).unwrap();
        let t = t.expect("token-wise wins for long prefixes");
        assert!(t > 64 && t <= 32768, "{t}");
    }

    #[test]
    fn plan_record_golden() {
        let plan = RestorationPlan::two_pointer(Strategy::TokenWise, &costs(&[1.0, 2.0, 3.0, 4.0], &[2.0; 4]));
        let golden = include_str!("../tests/golden/token_plan_1234.toml");
        assert_eq!(plan.to_record(), golden);
        assert_eq!(RestorationPlan::from_record(golden).unwrap(), plan);
    }

    fn unit_vecs() -> impl proptest::strategy::Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..24).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..10.0, n),
                prop::collection::vec(0.0f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn race_is_contiguous_exactly_once_and_bounded((c, i) in unit_vecs()) {
            let uc = UnitCosts::new(c.clone(), i.clone()).unwrap();
            let plan = RestorationPlan::two_pointer(Strategy::TokenWise, &uc);
            let n = c.len();
            prop_assert_eq!(plan.timeline.len(), n);
            let mut seen = vec![0; n];
            for e in &plan.timeline { seen[e.unit] += 1; }
            prop_assert!(seen.iter().all(|&k| k == 1));
            for (k, s) in plan.assignments.iter().enumerate() {
                let expect = if k < plan.meeting_point { Side::Recompute } else { Side::Load };
                prop_assert_eq!(*s, expect);
            }
            let max_end = plan.timeline.iter().map(|e| e.end).fold(0.0, f64::max);
            prop_assert_eq!(plan.predicted_finish, max_end);
            let pure = uc.total_compute().min(uc.total_io());
            prop_assert!(plan.predicted_finish <= pure + 1e-9);
            let (_, best) = brute_force_best_split(&c, &i).unwrap();
            prop_assert!(plan.predicted_finish <= best + uc.max_unit() + 1e-9);
        }

        #[test]
        fn harmonic_bound(tc in 0.0f64..1e4, ti in 0.0f64..1e4) {
            prop_assume!(tc + ti > 0.0);
            let o = closed_form_optimum(tc, ti);
            prop_assert!(o.optimal_time <= tc.min(ti) + 1e-12);
            if tc > 0.0 && ti > 0.0 {
                prop_assert!(o.optimal_time < tc.min(ti));
            } else {
                prop_assert_eq!(o.optimal_time, 0.0);
            }
        }
    }
}
