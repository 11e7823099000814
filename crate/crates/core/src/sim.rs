//! Serving-node simulation: arrivals, restoration under a pluggable policy,
//! first-token prefill, and metric extraction.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Request;
use crate::planner::Strategy;
use crate::scheduler::{
    ChannelId, ChannelUsage, Claim, Discipline, Engine, EngineOptions, IoPriority, ResourcePool,
    RestorationPolicy, RestorationSetup, SchedulingPolicy, Work, WorkMetric,
};

/// Restoration policy under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Policy {
    /// Two-pointer restoration with batch-aware I/O prioritization.
    BatchAware(SchedulingPolicy),
    RecomputeOnly,
    LoadOnly,
    /// Per-request closed-form token split with round-robin I/O.
    StaticHybrid,
}

impl Policy {
    pub const DEFAULT: Policy = Policy::BatchAware(SchedulingPolicy {
        io_priority: IoPriority::LongestRemainingFirst,
        work_metric: WorkMetric::RecomputeSeconds,
    });

    pub fn restoration(&self) -> RestorationPolicy {
        let (discipline, scheduling) = match *self {
            Policy::BatchAware(s) => (Discipline::TwoPointer, s),
            Policy::RecomputeOnly => (Discipline::RecomputeOnly, SchedulingPolicy::default()),
            Policy::LoadOnly => (Discipline::LoadOnly, SchedulingPolicy::default()),
            Policy::StaticHybrid => (
                Discipline::StaticSplit,
                SchedulingPolicy::with_priority(IoPriority::RoundRobin),
            ),
        };
        RestorationPolicy {
            discipline,
            scheduling,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::RecomputeOnly => f.write_str("recompute-only"),
            Policy::LoadOnly => f.write_str("load-only"),
            Policy::StaticHybrid => f.write_str("static-hybrid"),
            Policy::BatchAware(s) => {
                f.write_str("batch-aware")?;
                match s.io_priority {
                    IoPriority::LongestRemainingFirst => {}
                    IoPriority::ShortestFirst => f.write_str(":shortest-first")?,
                    IoPriority::RoundRobin => f.write_str(":round-robin")?,
                    IoPriority::Random { seed } => write!(f, ":random={seed}")?,
                }
                if s.work_metric == WorkMetric::Units {
                    f.write_str(":units")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    /// Accepts `recompute-only`, `load-only`, `static-hybrid` and
    /// `batch-aware[:shortest-first|:round-robin|:random=SEED][:units]`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or_default();
        let simple = match head {
            "recompute-only" => Some(Policy::RecomputeOnly),
            "load-only" => Some(Policy::LoadOnly),
            "static-hybrid" => Some(Policy::StaticHybrid),
            "batch-aware" => None,
            _ => return Err(Error::invalid(format!("unknown policy `{s}`"))),
        };
        if let Some(p) = simple {
            return match parts.next() {
                None => Ok(p),
                Some(_) => Err(Error::invalid(format!("policy `{head}` takes no options"))),
            };
        }
        let mut sched = SchedulingPolicy::default();
        for opt in parts {
            match opt {
                "longest-first" => sched.io_priority = IoPriority::LongestRemainingFirst,
                "shortest-first" => sched.io_priority = IoPriority::ShortestFirst,
                "round-robin" => sched.io_priority = IoPriority::RoundRobin,
                "units" => sched.work_metric = WorkMetric::Units,
                _ => match opt.strip_prefix("random=") {
                    Some(seed) => {
                        let seed = seed
                            .parse()
                            .map_err(|_| Error::invalid(format!("bad random seed in `{s}`")))?;
                        sched.io_priority = IoPriority::Random { seed };
                    }
                    None => return Err(Error::invalid(format!("unknown policy option `{opt}`"))),
                },
            }
        }
        Ok(Policy::BatchAware(sched))
    }
}

impl TryFrom<String> for Policy {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Policy> for String {
    fn from(p: Policy) -> String {
        p.to_string()
    }
}

/// Everything needed to reproduce one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub setup: RestorationSetup,
    pub pool: ResourcePool,
    pub policy: Policy,
    pub trace: Vec<Request>,
    /// Events after this instant are not simulated.
    pub horizon: f64,
    /// Seed the trace was generated from; recorded for provenance.
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.setup.validate()?;
        if !(self.horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        if let Some(r) = self.trace.iter().find(|r| r.arrival_time >= self.horizon) {
            return Err(Error::invalid(format!(
                "request {} arrives at {} which is not before the horizon {}",
                r.id, r.arrival_time, self.horizon
            )));
        }
        Ok(())
    }

    pub fn with_policy(&self, policy: Policy) -> Self {
        Self {
            policy,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: u64,
    pub arrival: f64,
    pub cached_prefix_tokens: u64,
    pub strategy: Strategy,
    pub restore_start: Option<f64>,
    pub restore_finish: Option<f64>,
    /// Arrival to first token, queueing included. `None` if unfinished at the horizon.
    pub ttft: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: Policy,
    pub requests: Vec<RequestRecord>,
    pub channels: Vec<ChannelUsage>,
    /// All compute work over `[first arrival, makespan]`.
    pub gpu_utilization: f64,
    pub io_utilization: f64,
    /// Restoration work only, over `[first arrival, last restoration finish]`.
    pub restoration_compute_utilization: f64,
    pub restoration_io_utilization: f64,
    /// Last first-token instant.
    pub makespan: f64,
    pub restoration_makespan: f64,
    pub unfinished: Vec<u64>,
    pub trace: Vec<Claim>,
}

fn ratio(busy: f64, span: f64) -> f64 {
    if span > 0.0 && busy > 0.0 {
        (busy / span).min(1.0)
    } else {
        0.0
    }
}

/// Busy time of `usage` inside `[from, to]` for the given kinds of work.
fn busy_within(usage: &ChannelUsage, from: f64, to: f64, kinds: &[Work]) -> f64 {
    usage
        .intervals
        .iter()
        .filter(|i| kinds.contains(&i.work))
        .map(|i| (i.end.min(to) - i.start.max(from)).max(0.0))
        .sum()
}

/// Runs one scenario to completion or to its horizon.
pub fn simulate(scenario: &Scenario) -> Result<SimReport> {
    scenario.validate()?;
    let mut engine = Engine::new(
        &scenario.setup,
        scenario.pool,
        scenario.policy.restoration(),
        &scenario.trace,
        EngineOptions::serving(),
    )?;
    while !engine.is_finished() {
        match engine.peek_time() {
            Some(t) if t > scenario.horizon => break,
            _ => {}
        }
        if engine.step()?.is_none() {
            break;
        }
    }
    let outcome = engine.outcome();

    let mut requests = Vec::with_capacity(outcome.requests.len());
    let mut unfinished = Vec::new();
    for (timing, req) in outcome.requests.iter().zip(&scenario.trace) {
        let done = timing.first_token.is_finite();
        if !done {
            unfinished.push(timing.request_id);
        }
        let restored = timing.restore_finish.is_finite();
        requests.push(RequestRecord {
            request_id: timing.request_id,
            arrival: timing.arrival,
            cached_prefix_tokens: req.cached_prefix_tokens,
            strategy: timing.strategy,
            restore_start: timing.restore_start.is_finite().then_some(timing.restore_start),
            restore_finish: restored.then_some(timing.restore_finish),
            ttft: done.then_some(timing.first_token - timing.arrival),
        });
    }

    let start = requests.iter().map(|r| r.arrival).fold(f64::INFINITY, f64::min);
    let start = if start.is_finite() { start } else { 0.0 };
    let makespan = outcome.makespan;
    let restoration_makespan = requests
        .iter()
        .filter_map(|r| r.restore_finish)
        .fold(0.0, f64::max);
    let is_compute = |c: &ChannelUsage| matches!(c.channel, ChannelId::Compute { .. });
    let (compute, io): (Vec<&ChannelUsage>, Vec<&ChannelUsage>) =
        outcome.channels.iter().partition(|c| is_compute(c));
    let all = [Work::Recompute, Work::Load, Work::Boundary, Work::Prefill];
    let restoring = [Work::Recompute, Work::Load, Work::Boundary];
    let sum = |chs: &[&ChannelUsage], to: f64, kinds: &[Work]| -> f64 {
        chs.iter().map(|c| busy_within(c, start, to, kinds)).sum()
    };
    let span = makespan - start;
    let rspan = restoration_makespan - start;
    Ok(SimReport {
        policy: scenario.policy,
        gpu_utilization: ratio(sum(&compute, makespan, &all), compute.len() as f64 * span),
        io_utilization: ratio(sum(&io, makespan, &all), io.len() as f64 * span),
        restoration_compute_utilization: ratio(
            sum(&compute, restoration_makespan, &restoring),
            compute.len() as f64 * rspan,
        ),
        restoration_io_utilization: ratio(
            sum(&io, restoration_makespan, &restoring),
            io.len() as f64 * rspan,
        ),
        requests,
        channels: outcome.channels,
        makespan,
        restoration_makespan,
        unfinished,
        trace: outcome.trace,
    })
}

/// Simulates the same scenario once per policy.
pub fn run_policy_comparison(scenario: &Scenario, policies: &[Policy]) -> Result<Vec<SimReport>> {
    policies.iter().map(|&p| simulate(&scenario.with_policy(p))).collect()
}

/// Nearest-rank percentiles of finished requests' TTFT; `percentiles` are ratios in `(0, 1]`.
pub fn percentile_summary(report: &SimReport, percentiles: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut ttfts: Vec<f64> = report.requests.iter().filter_map(|r| r.ttft).collect();
    if ttfts.is_empty() {
        return Err(Error::invalid("report has no finished requests"));
    }
    ttfts.sort_by(f64::total_cmp);
    percentiles
        .iter()
        .map(|&p| {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(format!("percentile {p} outside (0, 1]")));
            }
            let rank = (p * ttfts.len() as f64 - 1e-9).ceil().max(1.0) as usize;
            Ok((p, ttfts[rank.min(ttfts.len()) - 1]))
        })
        .collect()
}

pub const REPORT_PERCENTILES: [f64; 4] = [0.5, 0.9, 0.95, 0.99];

impl SimReport {
    pub fn mean_ttft(&self) -> Option<f64> {
        let done: Vec<f64> = self.requests.iter().filter_map(|r| r.ttft).collect();
        (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64)
    }

    /// `request_id,arrival,ttft_seconds,strategy`; unfinished requests have an empty TTFT.
    pub fn write_requests_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["request_id", "arrival", "ttft_seconds", "strategy"])?;
        for r in &self.requests {
            w.write_record([
                r.request_id.to_string(),
                r.arrival.to_string(),
                r.ttft.map(|t| t.to_string()).unwrap_or_default(),
                r.strategy.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn requests_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_requests_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn store_requests_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.requests_csv()).map_err(|e| Error::io(path, e))
    }

    /// Schedule trace as `time,request,side,unit,channel,end` lines in completion order.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("time,request,side,unit,channel,end\n");
        for c in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.start, c.request_id, c.work, c.unit, c.channel, c.end
            ));
        }
        out
    }

    pub fn summary(&self) -> ReportSummary {
        let finished = self.requests.len() - self.unfinished.len();
        ReportSummary {
            policy: self.policy.to_string(),
            requests: self.requests.len(),
            finished,
            unfinished: self.unfinished.clone(),
            ttft_includes_queueing: true,
            mean_ttft: self.mean_ttft(),
            percentiles: percentile_summary(self, &REPORT_PERCENTILES)
                .map(|v| {
                    v.into_iter()
                        .map(|(p, value)| PercentileRow { percentile: p, ttft: value })
                        .collect()
                })
                .unwrap_or_default(),
            makespan: self.makespan,
            restoration_makespan: self.restoration_makespan,
            gpu_utilization: self.gpu_utilization,
            io_utilization: self.io_utilization,
            restoration_compute_utilization: self.restoration_compute_utilization,
            restoration_io_utilization: self.restoration_io_utilization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileRow {
    pub percentile: f64,
    pub ttft: f64,
}

/// Headline numbers of a report, serialized into the summary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub policy: String,
    pub requests: usize,
    pub finished: usize,
    pub unfinished: Vec<u64>,
    pub ttft_includes_queueing: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_ttft: Option<f64>,
    pub makespan: f64,
    pub restoration_makespan: f64,
    pub gpu_utilization: f64,
    pub io_utilization: f64,
    pub restoration_compute_utilization: f64,
    pub restoration_io_utilization: f64,
    pub percentiles: Vec<PercentileRow>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{ComputeCostModel, IoCostModel};
    use crate::model::ModelSpec;
    use crate::planner::{closed_form_optimum, Strategy as Unit, UnitCosts};
    use proptest::prelude::*;

    fn setup(bandwidth_gbps: f64) -> RestorationSetup {
        RestorationSetup::single_stage(
            ModelSpec::qwen3_8b(),
            ComputeCostModel::new(0.01, 2.5e-5, 1.95e-9).unwrap(),
            IoCostModel::from_gbps(bandwidth_gbps).unwrap(),
        )
    }

    fn scenario(trace: Vec<Request>, policy: Policy) -> Scenario {
        Scenario {
            setup: setup(10.0),
            pool: ResourcePool::default(),
            policy,
            trace,
            horizon: 1e6,
            seed: 0,
        }
    }

    #[test]
    fn empty_trace() {
        let r = simulate(&scenario(vec![], Policy::DEFAULT)).unwrap();
        assert_eq!((r.makespan, r.gpu_utilization, r.io_utilization), (0.0, 0.0, 0.0));
        assert!(percentile_summary(&r, &[0.5]).is_err());
    }

    #[test]
    fn recompute_only_single_request() {
        let req = Request::new(1, 0.0, 8000, 64).unwrap();
        let r = simulate(&scenario(vec![req], Policy::RecomputeOnly)).unwrap();
        let expect = setup(10.0).compute.cost(8064);
        let ttft = r.requests[0].ttft.unwrap();
        assert!((ttft - expect).abs() < 1e-9 * expect, "{ttft} vs {expect}");
        assert_eq!(r.restoration_io_utilization, 0.0);
    }

    #[test]
    fn batch_aware_beats_single_resource_policies() {
        let req = Request::new(1, 0.0, 20_000, 32).unwrap();
        let reports = run_policy_comparison(
            &scenario(vec![req], Policy::DEFAULT),
            &[Policy::DEFAULT, Policy::RecomputeOnly, Policy::LoadOnly],
        )
        .unwrap();
        let t: Vec<f64> = reports.iter().map(|r| r.requests[0].ttft.unwrap()).collect();
        assert!(t[0] <= t[1].min(t[2]), "{t:?}");
        // cheap early chunks let the split beat the uniform-cost harmonic time
        let s = setup(10.0);
        let units = s.stage_units(&req, 0, Unit::TokenWise).unwrap();
        let opt = closed_form_optimum(units.total_compute(), units.total_io()).optimal_time;
        let restore = reports[0].requests[0].restore_finish.unwrap();
        assert!(restore <= opt + units.max_unit(), "{restore} vs {opt}");
    }

    #[test]
    fn identical_policies_identical_reports() {
        let trace: Vec<Request> = (0..6)
            .map(|i| Request::new(i, i as f64 * 0.3, 3000 + 2500 * i, 16).unwrap())
            .collect();
        let reports = run_policy_comparison(&scenario(trace, Policy::DEFAULT), &[Policy::DEFAULT; 2]).unwrap();
        assert_eq!(reports[0], reports[1]);
        assert_eq!(reports[0].requests_csv(), reports[1].requests_csv());
    }

    #[test]
    fn nearest_rank_percentiles() {
        let mut r = simulate(&scenario(vec![], Policy::DEFAULT)).unwrap();
        r.requests = (1..=100)
            .map(|i| RequestRecord {
                request_id: i,
                arrival: 0.0,
                cached_prefix_tokens: 0,
                strategy: Unit::TokenWise,
                restore_start: None,
                restore_finish: None,
                ttft: Some(i as f64),
            })
            .collect();
        let p = percentile_summary(&r, &[0.5, 0.9, 0.99, 1.0]).unwrap();
        assert_eq!(p.iter().map(|x| x.1).collect::<Vec<_>>(), vec![50.0, 90.0, 99.0, 100.0]);
        assert!(percentile_summary(&r, &[0.0]).is_err());
        r.requests.truncate(1);
        assert!(percentile_summary(&r, &[0.1, 0.5, 1.0]).unwrap().iter().all(|x| x.1 == 1.0));
    }

    #[test]
    fn straggler_gains_concentrate_in_tail() {
        let mut trace: Vec<Request> = (0..9).map(|i| Request::new(i, 0.0, 4000, 16).unwrap()).collect();
        trace.push(Request::new(9, 0.0, 30_000, 16).unwrap());
        let reports = run_policy_comparison(
            &scenario(trace, Policy::DEFAULT),
            &[Policy::DEFAULT, Policy::RecomputeOnly],
        )
        .unwrap();
        let ours = percentile_summary(&reports[0], &[0.5, 0.99]).unwrap();
        let base = percentile_summary(&reports[1], &[0.5, 0.99]).unwrap();
        let gain50 = base[0].1 - ours[0].1;
        let gain99 = base[1].1 - ours[1].1;
        assert!(gain99 >= gain50, "{gain50} {gain99}");
    }

    #[test]
    fn horizon_reports_unfinished() {
        let trace = vec![
            Request::new(0, 0.0, 20_000, 8).unwrap(),
            Request::new(1, 0.5, 20_000, 8).unwrap(),
        ];
        let mut sc = scenario(trace, Policy::DEFAULT);
        sc.horizon = 1.0;
        let r = simulate(&sc).unwrap();
        assert_eq!(r.unfinished, vec![0, 1]);
        assert!(r.requests.iter().all(|x| x.ttft.is_none()));
        assert!(r.requests_csv().lines().nth(1).unwrap().ends_with(",,token-wise"));
        sc.trace.push(Request::new(2, 2.0, 1, 1).unwrap());
        assert!(simulate(&sc).is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        for name in [
            "batch-aware",
            "batch-aware:shortest-first",
            "batch-aware:round-robin:units",
            "batch-aware:random=42",
            "recompute-only",
            "load-only",
            "static-hybrid",
        ] {
            let p: Policy = name.parse().unwrap();
            assert_eq!(p.to_string(), name);
        }
        assert!("greedy".parse::<Policy>().is_err());
        assert!("load-only:units".parse::<Policy>().is_err());
    }

    fn channels_consistent(r: &SimReport) -> std::result::Result<(), TestCaseError> {
        for ch in &r.channels {
            for w in ch.intervals.windows(2) {
                prop_assert!(w[0].end <= w[1].start + 1e-9, "overlap on {}", ch.channel);
            }
            let claimed: f64 = r
                .trace
                .iter()
                .filter(|c| c.channel == ch.channel)
                .map(|c| c.end - c.start)
                .sum();
            prop_assert_eq!(claimed, ch.busy(None));
        }
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn reports_are_consistent(
            lens in prop::collection::vec((0u64..24_000, 0.0f64..3.0), 1..10),
            policy in 0usize..4, stages in 1usize..3, k in 1usize..3, fair in any::<bool>())
        {
            let trace: Vec<Request> = lens.iter().enumerate()
                .map(|(i, &(n, a))| Request::new(i as u64, a, n, 32).unwrap()).collect();
            let policy = [Policy::DEFAULT, Policy::RecomputeOnly, Policy::LoadOnly, Policy::StaticHybrid][policy];
            let mut sc = scenario(trace.clone(), policy);
            sc.setup.partition = crate::model::StagePartition::uniform(36, stages).unwrap();
            sc.pool = ResourcePool {
                io_channels: k,
                sharing: if fair { crate::scheduler::IoSharing::FairShare } else { Default::default() },
            };
            let r = simulate(&sc).unwrap();
            prop_assert!(r.unfinished.is_empty());
            for u in [r.gpu_utilization, r.io_utilization, r.restoration_compute_utilization, r.restoration_io_utilization] {
                prop_assert!((0.0..=1.0).contains(&u));
            }
            channels_consistent(&r)?;
            // resource-capacity lower bound on restoration
            let mut comp = 0.0;
            let mut io = 0.0;
            for c in &r.trace {
                match c.work {
                    Work::Recompute => comp += c.end - c.start,
                    Work::Load | Work::Boundary if !fair => io += c.end - c.start,
                    _ => {}
                }
            }
            let bound = (comp / stages as f64).max(io / (k * stages) as f64);
            prop_assert!(r.makespan + 1e-9 >= bound);
            for (rec, req) in r.requests.iter().zip(&trace) {
                prop_assert!(rec.ttft.unwrap() >= 0.0);
                prop_assert_eq!(rec.request_id, req.id);
            }
            match policy {
                Policy::RecomputeOnly => prop_assert_eq!(r.restoration_io_utilization, 0.0),
                Policy::LoadOnly => prop_assert_eq!(r.restoration_compute_utilization, 0.0),
                _ => {}
            }
        }

        #[test]
        fn uncontended_ttft_bounded_below_by_harmonic_optimum(n in 1u64..40, c in 0.1f64..2.0, io in 0.1f64..2.0) {
            // uniform units: per-chunk compute c, per-chunk load io
            let spec = ModelSpec::new(1, 1, 1, 1, 1).unwrap();
            let mut s = RestorationSetup::single_stage(
                spec,
                ComputeCostModel::new(0.0, c, 0.0).unwrap(),
                IoCostModel::new(2.0 / io, 0.0).unwrap(),
            );
            s.chunk_size = 1;
            let req = Request::new(0, 0.0, n, 1).unwrap();
            let sc = Scenario { setup: s.clone(), pool: ResourcePool::default(), policy: Policy::DEFAULT,
                trace: vec![req], horizon: 1e9, seed: 0 };
            let r = simulate(&sc).unwrap();
            let units: UnitCosts = s.stage_units(&req, 0, Unit::TokenWise).unwrap();
            let opt = closed_form_optimum(units.total_compute(), units.total_io()).optimal_time;
            let restore = r.requests[0].restore_finish.unwrap();
            prop_assert!(restore >= opt * (1.0 - 1e-12));
            prop_assert!(restore <= opt + c.max(io) + 1e-9);
            prop_assert!(r.requests[0].ttft.unwrap() >= opt * (1.0 - 1e-12));
        }
    }
}
