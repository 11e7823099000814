//! Batch restoration scheduling over shared compute and I/O channels.
//!
//! Every request keeps a compute pointer at the front of its unit sequence and
//! an I/O pointer at the back, one pair per pipeline stage. Each stage owns a
//! compute channel and `K` I/O channels. Whenever a channel is free it claims
//! one unit: I/O channels serve the request with the largest remaining
//! recompute cost (re-ranked after every claim), the compute channel serves
//! requests round-robin. Time advances from event to event; nothing is
//! preempted once started.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{ComputeCostModel, IoCostModel};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Request, StagePartition, DEFAULT_CHUNK_SIZE};
use crate::multi_gpu::BoundaryActivationModel;
use crate::planner::{
    closed_form_optimum, compute_should_claim, io_should_claim, range_sum, select_strategy,
    Strategy, UnitCosts,
};

/// Order in which I/O channels serve competing requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IoPriority {
    LongestRemainingFirst,
    ShortestFirst,
    RoundRobin,
    Random { seed: u64 },
}

/// Measure of a request's remaining work used for I/O ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkMetric {
    #[default]
    RecomputeSeconds,
    Units,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulingPolicy {
    pub io_priority: IoPriority,
    pub work_metric: WorkMetric,
}

impl Default for SchedulingPolicy {
    fn default() -> Self {
        Self {
            io_priority: IoPriority::LongestRemainingFirst,
            work_metric: WorkMetric::RecomputeSeconds,
        }
    }
}

impl SchedulingPolicy {
    pub fn with_priority(io_priority: IoPriority) -> Self {
        Self {
            io_priority,
            ..Self::default()
        }
    }
}

/// How the units of one request may be divided between the two resources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discipline {
    /// Adaptive two-pointer race.
    TwoPointer,
    RecomputeOnly,
    LoadOnly,
    /// Split fixed per request at the closed-form optimum.
    StaticSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestorationPolicy {
    pub discipline: Discipline,
    pub scheduling: SchedulingPolicy,
}

impl RestorationPolicy {
    pub fn two_pointer(scheduling: SchedulingPolicy) -> Self {
        Self {
            discipline: Discipline::TwoPointer,
            scheduling,
        }
    }

    /// Only the adaptive discipline switches to layer-wise units below the threshold.
    pub fn strategy_for(&self, prefix_tokens: u64, threshold: Option<u64>) -> Strategy {
        match self.discipline {
            Discipline::TwoPointer => select_strategy(prefix_tokens, threshold),
            _ => Strategy::TokenWise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IoSharing {
    /// Each channel moves data at the full link bandwidth.
    #[default]
    Dedicated,
    /// Concurrent transfers on a stage split the link bandwidth evenly.
    FairShare,
}

/// One compute channel per stage plus `io_channels` I/O channels per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourcePool {
    pub io_channels: usize,
    pub sharing: IoSharing,
}

impl Default for ResourcePool {
    fn default() -> Self {
        Self {
            io_channels: 1,
            sharing: IoSharing::Dedicated,
        }
    }
}

/// Model, costs and partitioning shared by every request of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RestorationSetup {
    pub spec: ModelSpec,
    pub partition: StagePartition,
    pub compute: ComputeCostModel,
    pub io: IoCostModel,
    pub chunk_size: u64,
    pub threshold: Option<u64>,
    pub include_boundary_cost: bool,
    pub shared_link: bool,
}

impl RestorationSetup {
    pub fn single_stage(spec: ModelSpec, compute: ComputeCostModel, io: IoCostModel) -> Self {
        Self {
            partition: StagePartition::uniform(spec.num_layers, 1).expect("num_layers >= 1"),
            spec,
            compute,
            io,
            chunk_size: DEFAULT_CHUNK_SIZE,
            threshold: None,
            include_boundary_cost: true,
            shared_link: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.compute.validate()?;
        self.io.validate()?;
        if self.partition.num_layers() != self.spec.num_layers {
            return Err(Error::invalid("partition does not cover the model's layers"));
        }
        if self.chunk_size == 0 {
            return Err(Error::invalid("chunk_size must be >= 1"));
        }
        Ok(())
    }

    pub fn stage_io(&self) -> IoCostModel {
        if self.shared_link {
            self.io.shared(self.partition.num_stages())
        } else {
            self.io
        }
    }

    /// Unit costs of `request` on `stage` under `strategy`.
    pub fn stage_units(&self, request: &Request, stage: usize, strategy: Strategy) -> Result<UnitCosts> {
        let layers = self.partition.ranges()[stage].len();
        UnitCosts::for_strategy(
            strategy,
            request.cached_prefix_tokens,
            self.chunk_size,
            &self.compute,
            &self.stage_io(),
            &self.spec,
            layers,
        )
    }

    /// Per-stage cost of computing the new tokens on top of the restored prefix.
    pub fn prefill_costs(&self, request: &Request) -> Vec<f64> {
        let full = self.compute.extension_cost(
            request.cached_prefix_tokens,
            request.cached_prefix_tokens + request.new_tokens,
        );
        let layers = self.spec.num_layers as f64;
        self.partition
            .ranges()
            .iter()
            .map(|r| {
                if r.len() == self.spec.num_layers {
                    full
                } else {
                    r.len() as f64 / layers * full
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelId {
    Compute { stage: usize },
    Io { stage: usize, index: usize },
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelId::Compute { stage } => write!(f, "gpu{stage}"),
            ChannelId::Io { stage, index } => write!(f, "io{stage}.{index}"),
        }
    }
}

/// What a channel does during one claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Work {
    Recompute,
    Load,
    /// Cached activations entering a stage's first layer.
    Boundary,
    /// First-token computation over the uncached suffix.
    Prefill,
}

impl fmt::Display for Work {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Work::Recompute => "recompute",
            Work::Load => "load",
            Work::Boundary => "boundary",
            Work::Prefill => "prefill",
        })
    }
}

/// One unit of work placed on a channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub request_id: u64,
    pub stage: usize,
    pub work: Work,
    /// Unit index for recompute/load claims, 0 otherwise.
    pub unit: usize,
    pub channel: ChannelId,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusyInterval {
    pub start: f64,
    pub end: f64,
    pub work: Work,
}

/// Pointer pair of one request on one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointerState {
    pub request_id: u64,
    pub stage: usize,
    pub strategy: Strategy,
    /// Next unit the compute side would take.
    pub p_comp: i64,
    /// Next unit the I/O side would take.
    pub p_io: i64,
    /// Recompute seconds of all unclaimed units.
    pub remaining_recompute_cost: f64,
    pub complete: bool,
}

/// Snapshot of every request's pointers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchState {
    pub pointers: Vec<PointerState>,
}

impl BatchState {
    pub fn incomplete(&self) -> impl Iterator<Item = &PointerState> {
        self.pointers.iter().filter(|p| !p.complete)
    }
}

/// Initial pointers: token-wise `(0, ⌈N_c/C⌉ − 1)`, layer-wise `(0, L − 1)`.
pub fn init_batch(
    requests: &[Request],
    threshold: Option<u64>,
    chunk_size: u64,
    spec: &ModelSpec,
    compute: &ComputeCostModel,
) -> Result<BatchState> {
    if requests.is_empty() {
        return Err(Error::invalid("batch is empty"));
    }
    // loads are irrelevant for the initial pointers
    let io = IoCostModel::new(1.0, 0.0)?;
    let mut setup = RestorationSetup::single_stage(*spec, *compute, io);
    setup.chunk_size = chunk_size;
    setup.threshold = threshold;
    let engine = Engine::new(
        &setup,
        ResourcePool::default(),
        RestorationPolicy::two_pointer(SchedulingPolicy::default()),
        requests,
        EngineOptions::batch(),
    )?;
    Ok(engine.state())
}

fn rank_cmp(priority: IoPriority, a: (f64, u64), b: (f64, u64)) -> std::cmp::Ordering {
    let by_id = a.1.cmp(&b.1);
    match priority {
        IoPriority::LongestRemainingFirst => b.0.total_cmp(&a.0).then(by_id),
        IoPriority::ShortestFirst => a.0.total_cmp(&b.0).then(by_id),
        IoPriority::RoundRobin | IoPriority::Random { .. } => by_id,
    }
}

fn state_work(p: &PointerState, metric: WorkMetric) -> f64 {
    match metric {
        WorkMetric::RecomputeSeconds => p.remaining_recompute_cost,
        WorkMetric::Units => (p.p_io - p.p_comp + 1).max(0) as f64,
    }
}

/// Up to `io_channels` incomplete requests to receive I/O next. Longest-first
/// ranks by remaining work with ties to the smaller id; round-robin starts from
/// the smallest id; random draws without replacement from `seed`.
pub fn pick_io_targets(state: &BatchState, pool: &ResourcePool, policy: &SchedulingPolicy) -> Vec<u64> {
    let mut live: Vec<(f64, u64)> = state
        .incomplete()
        .map(|p| (state_work(p, policy.work_metric), p.request_id))
        .collect();
    live.sort_by(|a, b| rank_cmp(policy.io_priority, *a, *b));
    live.dedup_by_key(|x| x.1);
    if let IoPriority::Random { seed } = policy.io_priority {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..live.len()).rev() {
            live.swap(i, rng.random_range(0..=i));
        }
    }
    live.into_iter().take(pool.io_channels).map(|x| x.1).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BoundaryState {
    NotNeeded,
    Pending(f64),
    InFlight,
    Done,
}

#[derive(Debug, Clone)]
struct Job {
    request: usize,
    stage: usize,
    units: UnitCosts,
    lo: usize,
    hi: usize,
    static_split: usize,
    boundary: BoundaryState,
    in_flight: usize,
    /// Units finished by the compute side, always a prefix.
    recomputed: usize,
    finish: f64,
    done: bool,
    claims: Vec<u8>,
}

impl Job {
    fn remaining_compute(&self) -> f64 {
        range_sum(&self.units.compute, self.lo..self.hi)
    }

    fn remaining_io(&self) -> f64 {
        range_sum(&self.units.io, self.lo..self.hi)
    }

    fn ready(&self) -> bool {
        matches!(self.boundary, BoundaryState::NotNeeded | BoundaryState::Done)
    }

    fn has_units(&self) -> bool {
        self.lo < self.hi
    }
}

#[derive(Debug, Clone)]
struct Req {
    request: Request,
    strategy: Strategy,
    admitted: bool,
    jobs: Vec<usize>,
    restore_start: Option<f64>,
    restore_finish: Option<f64>,
    prefill: Vec<f64>,
    ttft_end: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Op {
    channel: ChannelId,
    request: usize,
    job: Option<usize>,
    work: Work,
    unit: usize,
    start: f64,
    /// Completion time (dedicated) or last projection (fair share).
    end: f64,
    /// Nominal seconds still to transfer at full bandwidth (fair share only).
    remaining: f64,
    fair: bool,
}

#[derive(Debug, Clone, Default)]
struct Channel {
    op: Option<usize>,
    intervals: Vec<BusyInterval>,
}

/// Per-run switches distinguishing a pure batch schedule from a serving simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineOptions {
    /// Requests become visible at their arrival time instead of all at 0.
    pub honor_arrivals: bool,
    /// Run first-token prefill on the compute channels after restoration.
    pub prefill: bool,
}

impl EngineOptions {
    pub fn batch() -> Self {
        Self {
            honor_arrivals: false,
            prefill: false,
        }
    }

    pub fn serving() -> Self {
        Self {
            honor_arrivals: true,
            prefill: true,
        }
    }
}

/// Final per-request timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestTiming {
    pub request_id: u64,
    pub arrival: f64,
    pub strategy: Strategy,
    pub restore_start: f64,
    pub restore_finish: f64,
    /// End of first-token prefill; equals `restore_finish` when prefill is off.
    pub first_token: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelUsage {
    pub channel: ChannelId,
    pub intervals: Vec<BusyInterval>,
}

impl ChannelUsage {
    pub fn busy(&self, work: Option<Work>) -> f64 {
        self.intervals
            .iter()
            .filter(|i| work.is_none_or(|w| i.work == w))
            .map(|i| i.end - i.start)
            .sum()
    }
}

/// Everything recorded during one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineOutcome {
    pub requests: Vec<RequestTiming>,
    pub channels: Vec<ChannelUsage>,
    /// Completed claims in completion order.
    pub trace: Vec<Claim>,
    pub makespan: f64,
    /// Number of times the engine had to force a claim no channel volunteered for.
    pub forced_claims: usize,
}

/// Discrete-event scheduler state machine.
#[derive(Debug, Clone)]
pub struct Engine {
    setup: RestorationSetup,
    pool: ResourcePool,
    policy: RestorationPolicy,
    options: EngineOptions,
    reqs: Vec<Req>,
    jobs: Vec<Job>,
    /// Request indices sorted by arrival then id.
    arrival_order: Vec<usize>,
    next_arrival: usize,
    compute: Vec<Channel>,
    io: Vec<Vec<Channel>>,
    ops: Vec<Option<Op>>,
    fair_last: Vec<f64>,
    prefill_queue: Vec<Vec<(f64, usize)>>,
    compute_cursor: Vec<usize>,
    io_cursor: Vec<usize>,
    rng: ChaCha8Rng,
    now: f64,
    trace: Vec<Claim>,
    forced: usize,
}

impl Engine {
    pub fn new(
        setup: &RestorationSetup,
        pool: ResourcePool,
        policy: RestorationPolicy,
        requests: &[Request],
        options: EngineOptions,
    ) -> Result<Self> {
        setup.validate()?;
        if pool.io_channels == 0 {
            return Err(Error::invalid("need at least one I/O channel"));
        }
        let mut ids: Vec<u64> = requests.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateId(w[0]));
        }
        let stages = setup.partition.num_stages();
        let stage_io = setup.stage_io();
        let boundary = BoundaryActivationModel::new(&setup.spec, stage_io);
        let mut reqs = Vec::with_capacity(requests.len());
        let mut jobs = Vec::new();
        for (ri, r) in requests.iter().enumerate() {
            r.validate()?;
            let strategy = policy.strategy_for(r.cached_prefix_tokens, setup.threshold);
            let mut job_ids = Vec::with_capacity(stages);
            for s in 0..stages {
                let units = setup.stage_units(r, s, strategy)?;
                let n = units.len();
                let split = match policy.discipline {
                    Discipline::StaticSplit => {
                        let opt = closed_form_optimum(units.total_compute(), units.total_io());
                        (opt.optimal_split(n).round() as usize).min(n)
                    }
                    Discipline::RecomputeOnly => n,
                    Discipline::LoadOnly => 0,
                    Discipline::TwoPointer => 0,
                };
                // recompute-only pipelines activations from the previous stage instead
                let needs_boundary = policy.discipline != Discipline::RecomputeOnly;
                let bstate = if s > 0 && n > 0 && setup.include_boundary_cost && needs_boundary {
                    BoundaryState::Pending(boundary.load_time(r.cached_prefix_tokens))
                } else {
                    BoundaryState::NotNeeded
                };
                job_ids.push(jobs.len());
                jobs.push(Job {
                    request: ri,
                    stage: s,
                    lo: 0,
                    hi: n,
                    static_split: split,
                    boundary: bstate,
                    in_flight: 0,
                    recomputed: 0,
                    finish: 0.0,
                    done: false,
                    claims: vec![0; n],
                    units,
                });
            }
            reqs.push(Req {
                request: *r,
                strategy,
                admitted: false,
                jobs: job_ids,
                restore_start: None,
                restore_finish: None,
                prefill: if options.prefill {
                    setup.prefill_costs(r)
                } else {
                    Vec::new()
                },
                ttft_end: None,
            });
        }
        let arrival_time = |i: usize| {
            if options.honor_arrivals {
                reqs[i].request.arrival_time
            } else {
                0.0
            }
        };
        let mut arrival_order: Vec<usize> = (0..reqs.len()).collect();
        arrival_order.sort_by(|&a, &b| {
            arrival_time(a)
                .total_cmp(&arrival_time(b))
                .then(reqs[a].request.id.cmp(&reqs[b].request.id))
        });
        let seed = match policy.scheduling.io_priority {
            IoPriority::Random { seed } => seed,
            _ => 0,
        };
        Ok(Self {
            setup: setup.clone(),
            pool,
            policy,
            options,
            reqs,
            jobs,
            arrival_order,
            next_arrival: 0,
            compute: vec![Channel::default(); stages],
            io: vec![vec![Channel::default(); pool.io_channels]; stages],
            ops: Vec::new(),
            fair_last: vec![0.0; stages],
            prefill_queue: vec![Vec::new(); stages],
            compute_cursor: vec![usize::MAX; stages],
            io_cursor: vec![usize::MAX; stages],
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: 0.0,
            trace: Vec::new(),
            forced: 0,
        })
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn state(&self) -> BatchState {
        BatchState {
            pointers: self
                .jobs
                .iter()
                .map(|j| PointerState {
                    request_id: self.reqs[j.request].request.id,
                    stage: j.stage,
                    strategy: self.reqs[j.request].strategy,
                    p_comp: j.lo as i64,
                    p_io: j.hi as i64 - 1,
                    remaining_recompute_cost: j.remaining_compute(),
                    complete: !j.has_units(),
                })
                .collect(),
        }
    }

    fn arrival_of(&self, r: usize) -> f64 {
        if self.options.honor_arrivals {
            self.reqs[r].request.arrival_time
        } else {
            0.0
        }
    }

    pub fn is_finished(&self) -> bool {
        self.next_arrival == self.arrival_order.len()
            && self.ops.iter().all(Option::is_none)
            && self.reqs.iter().all(|r| {
                if self.options.prefill {
                    r.ttft_end.is_some()
                } else {
                    r.restore_finish.is_some()
                }
            })
    }

    fn op_end(&self, op: &Op) -> f64 {
        if op.fair {
            let stage = match op.channel {
                ChannelId::Io { stage, .. } => stage,
                ChannelId::Compute { stage } => stage,
            };
            self.fair_last[stage] + op.remaining * self.fair_count(stage) as f64
        } else {
            op.end
        }
    }

    fn fair_count(&self, stage: usize) -> usize {
        self.io[stage].iter().filter(|c| c.op.is_some()).count()
    }

    /// Time of the next pending event, if any.
    pub fn peek_time(&self) -> Option<f64> {
        self.next_event_time()
    }

    fn next_event_time(&self) -> Option<f64> {
        let arrival = self
            .arrival_order
            .get(self.next_arrival)
            .map(|&r| self.arrival_of(r));
        let op = self
            .ops
            .iter()
            .flatten()
            .map(|o| self.op_end(o))
            .min_by(f64::total_cmp);
        match (arrival, op) {
            (Some(a), Some(o)) => Some(a.min(o)),
            (a, o) => a.or(o),
        }
    }

    /// Advances to the next event, applies completions and arrivals, and starts
    /// every claim that becomes possible at that instant. Returns `None` once
    /// all work is done.
    pub fn step(&mut self) -> Result<Option<Vec<Claim>>> {
        if self.is_finished() {
            return Ok(None);
        }
        let Some(t) = self.next_event_time() else {
            // nothing in flight and nothing arriving: only a stall can get us here
            let mut claims = Vec::new();
            self.force_claim(&mut claims)?;
            return Ok(Some(claims));
        };
        if t < self.now {
            return Err(Error::InconsistentState(format!(
                "time moved backwards from {} to {t}",
                self.now
            )));
        }
        self.now = t;
        for s in 0..self.fair_last.len() {
            self.advance_fair(s, t);
        }
        self.complete_ops(t)?;
        while let Some(&r) = self.arrival_order.get(self.next_arrival) {
            if self.arrival_of(r) > t {
                break;
            }
            self.next_arrival += 1;
            self.admit(r, t);
        }
        let mut claims = Vec::new();
        self.dispatch(&mut claims)?;
        if claims.is_empty()
            && self.ops.iter().all(Option::is_none)
            && self.next_arrival == self.arrival_order.len()
            && !self.is_finished()
        {
            self.force_claim(&mut claims)?;
        }
        Ok(Some(claims))
    }

    /// Runs to completion.
    pub fn run(mut self) -> Result<EngineOutcome> {
        while self.step()?.is_some() {}
        Ok(self.outcome())
    }

    fn advance_fair(&mut self, stage: usize, t: f64) {
        if self.pool.sharing != IoSharing::FairShare {
            return;
        }
        let m = self.fair_count(stage);
        let elapsed = t - self.fair_last[stage];
        if m > 0 && elapsed > 0.0 {
            let ids: Vec<usize> = self.io[stage].iter().filter_map(|c| c.op).collect();
            for id in ids {
                if let Some(op) = self.ops[id].as_mut() {
                    op.remaining = (op.remaining - elapsed / m as f64).max(0.0);
                }
            }
        }
        self.fair_last[stage] = t;
    }

    fn complete_ops(&mut self, t: f64) -> Result<()> {
        let mut done: Vec<usize> = Vec::new();
        for (id, op) in self.ops.iter().enumerate() {
            let Some(op) = op else { continue };
            let finished = if op.fair {
                op.remaining <= 1e-12 * (op.end - op.start).abs().max(1.0)
            } else {
                op.end <= t
            };
            if finished {
                done.push(id);
            }
        }
        // deterministic completion order: I/O before compute, then channel order
        done.sort_by_key(|&id| {
            let op = self.ops[id].as_ref().expect("live op");
            let kind = match op.channel {
                ChannelId::Io { .. } => 0,
                ChannelId::Compute { .. } => 1,
            };
            (kind, op.channel)
        });
        for id in done {
            let op = self.ops[id].take().expect("live op");
            let end = if op.fair { t } else { op.end };
            let channel = self.channel_mut(op.channel);
            channel.op = None;
            channel.intervals.push(BusyInterval {
                start: op.start,
                end,
                work: op.work,
            });
            self.trace.push(Claim {
                request_id: self.reqs[op.request].request.id,
                stage: match op.channel {
                    ChannelId::Compute { stage } | ChannelId::Io { stage, .. } => stage,
                },
                work: op.work,
                unit: op.unit,
                channel: op.channel,
                start: op.start,
                end,
            });
            match op.work {
                Work::Boundary => {
                    let j = op.job.expect("boundary belongs to a job");
                    self.jobs[j].boundary = BoundaryState::Done;
                    self.jobs[j].finish = self.jobs[j].finish.max(end);
                }
                Work::Recompute | Work::Load => {
                    let j = op.job.expect("unit belongs to a job");
                    let job = &mut self.jobs[j];
                    job.in_flight -= 1;
                    if op.work == Work::Recompute {
                        job.recomputed += 1;
                    }
                    job.finish = job.finish.max(end);
                    self.maybe_finish_job(j);
                }
                Work::Prefill => {
                    let stage = match op.channel {
                        ChannelId::Compute { stage } => stage,
                        ChannelId::Io { .. } => unreachable!("prefill runs on compute"),
                    };
                    if stage + 1 < self.setup.partition.num_stages() {
                        self.prefill_queue[stage + 1].push((end, op.request));
                    } else {
                        self.reqs[op.request].ttft_end = Some(end);
                    }
                }
            }
        }
        Ok(())
    }

    fn maybe_finish_job(&mut self, j: usize) {
        let job = &mut self.jobs[j];
        if job.done || job.has_units() || job.in_flight > 0 || !job.ready() {
            return;
        }
        job.done = true;
        let r = job.request;
        if self.reqs[r].jobs.iter().all(|&k| self.jobs[k].done) {
            let finish = self.reqs[r]
                .jobs
                .iter()
                .map(|&k| self.jobs[k].finish)
                .fold(self.arrival_of(r), f64::max);
            self.restoration_done(r, finish);
        }
    }

    fn restoration_done(&mut self, r: usize, finish: f64) {
        self.reqs[r].restore_finish = Some(finish);
        if self.options.prefill {
            self.prefill_queue[0].push((finish, r));
        }
    }

    fn admit(&mut self, r: usize, t: f64) {
        self.reqs[r].admitted = true;
        let jobs = self.reqs[r].jobs.clone();
        for j in jobs {
            self.jobs[j].finish = t;
            self.maybe_finish_job(j);
        }
    }

    fn channel_mut(&mut self, id: ChannelId) -> &mut Channel {
        match id {
            ChannelId::Compute { stage } => &mut self.compute[stage],
            ChannelId::Io { stage, index } => &mut self.io[stage][index],
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn start_op(
        &mut self,
        channel: ChannelId,
        request: usize,
        job: Option<usize>,
        work: Work,
        unit: usize,
        duration: f64,
        claims: &mut Vec<Claim>,
    ) {
        let t = self.now;
        let fair = matches!(channel, ChannelId::Io { .. }) && self.pool.sharing == IoSharing::FairShare;
        if fair {
            if let ChannelId::Io { stage, .. } = channel {
                self.advance_fair(stage, t);
            }
        }
        let op = Op {
            channel,
            request,
            job,
            work,
            unit,
            start: t,
            end: t + duration,
            remaining: duration,
            fair,
        };
        let id = match self.ops.iter().position(Option::is_none) {
            Some(i) => {
                self.ops[i] = Some(op);
                i
            }
            None => {
                self.ops.push(Some(op));
                self.ops.len() - 1
            }
        };
        self.channel_mut(channel).op = Some(id);
        let req = &mut self.reqs[request];
        if matches!(work, Work::Recompute | Work::Load | Work::Boundary) && req.restore_start.is_none() {
            req.restore_start = Some(t);
        }
        claims.push(Claim {
            request_id: req.request.id,
            stage: match channel {
                ChannelId::Compute { stage } | ChannelId::Io { stage, .. } => stage,
            },
            work,
            unit,
            channel,
            start: t,
            end: t + duration,
        });
    }

    fn dispatch(&mut self, claims: &mut Vec<Claim>) -> Result<()> {
        loop {
            let mut progress = false;
            for s in 0..self.io.len() {
                for k in 0..self.io[s].len() {
                    if self.io[s][k].op.is_none() && self.try_io(s, k, claims)? {
                        progress = true;
                    }
                }
            }
            for s in 0..self.compute.len() {
                if self.compute[s].op.is_none() && self.try_compute(s, claims)? {
                    progress = true;
                }
            }
            if !progress {
                return Ok(());
            }
        }
    }

    fn active_jobs(&self, stage: usize) -> impl Iterator<Item = usize> + '_ {
        self.jobs.iter().enumerate().filter_map(move |(j, job)| {
            (job.stage == stage && self.reqs[job.request].admitted && job.ready() && job.has_units())
                .then_some(j)
        })
    }

    fn work_of(&self, j: usize) -> f64 {
        let job = &self.jobs[j];
        match self.policy.scheduling.work_metric {
            WorkMetric::RecomputeSeconds => job.remaining_compute(),
            WorkMetric::Units => (job.hi - job.lo) as f64,
        }
    }

    fn io_allowed(&self, j: usize) -> bool {
        let job = &self.jobs[j];
        match self.policy.discipline {
            Discipline::RecomputeOnly => false,
            Discipline::LoadOnly => true,
            Discipline::StaticSplit => job.hi > job.static_split,
            Discipline::TwoPointer => {
                let t = self.now;
                let stage = job.stage;
                let compute_free = self.compute[stage]
                    .op
                    .and_then(|id| self.ops[id].as_ref())
                    .map_or(t, |op| op.end.max(t));
                // processor-sharing estimate of when compute would finish this job
                let mine = job.remaining_compute();
                let shared: f64 = self
                    .active_jobs(stage)
                    .map(|q| self.jobs[q].remaining_compute().min(mine))
                    .fold(0.0, |acc, w| acc + w);
                let prefill: f64 = self.prefill_queue[stage]
                    .iter()
                    .map(|&(_, r)| self.reqs[r].prefill[stage])
                    .fold(0.0, |acc, w| acc + w);
                let compute_finish_all = compute_free + prefill + shared;
                io_should_claim(t, job.units.io[job.hi - 1], compute_finish_all)
            }
        }
    }

    fn compute_allowed(&self, j: usize) -> bool {
        let job = &self.jobs[j];
        match self.policy.discipline {
            Discipline::RecomputeOnly => {
                // stage s needs stage s-1's output for the same unit
                job.stage == 0 || {
                    let prev = self.reqs[job.request].jobs[job.stage - 1];
                    self.jobs[prev].recomputed > job.lo
                }
            }
            Discipline::LoadOnly => false,
            Discipline::StaticSplit => job.lo < job.static_split,
            Discipline::TwoPointer => {
                let t = self.now;
                let stage = job.stage;
                let io_free = self.io[stage]
                    .iter()
                    .map(|c| {
                        c.op.and_then(|id| self.ops[id].as_ref())
                            .map_or(t, |op| self.op_end(op).max(t))
                    })
                    .fold(f64::INFINITY, f64::min);
                let id = self.reqs[job.request].request.id;
                let mine = job.remaining_io();
                let my_rank = (self.work_of(j), id);
                let priority = self.policy.scheduling.io_priority;
                let backlog: f64 = self
                    .active_jobs(stage)
                    .filter(|&q| q != j)
                    .map(|q| {
                        let other = self.jobs[q].remaining_io();
                        match priority {
                            // longest-first drains everyone to a common level, so all others go first
                            IoPriority::LongestRemainingFirst => other,
                            IoPriority::ShortestFirst => {
                                let rank = (self.work_of(q), self.reqs[self.jobs[q].request].request.id);
                                if rank_cmp(priority, rank, my_rank).is_lt() {
                                    other
                                } else {
                                    0.0
                                }
                            }
                            IoPriority::RoundRobin | IoPriority::Random { .. } => other.min(mine),
                        }
                    })
                    .fold(0.0, |acc, w| acc + w);
                let io_finish_all = io_free + backlog / self.pool.io_channels as f64 + mine;
                compute_should_claim(t, job.units.compute[job.lo], io_finish_all)
            }
        }
    }

    fn try_io(&mut self, stage: usize, index: usize, claims: &mut Vec<Claim>) -> Result<bool> {
        let channel = ChannelId::Io { stage, index };
        // boundary activations first, oldest request first
        let pending = self
            .jobs
            .iter()
            .enumerate()
            .filter(|(_, job)| {
                job.stage == stage
                    && self.reqs[job.request].admitted
                    && matches!(job.boundary, BoundaryState::Pending(_))
            })
            .min_by(|(_, a), (_, b)| {
                self.arrival_of(a.request)
                    .total_cmp(&self.arrival_of(b.request))
                    .then(self.reqs[a.request].request.id.cmp(&self.reqs[b.request].request.id))
            })
            .map(|(j, _)| j);
        if let Some(j) = pending {
            let BoundaryState::Pending(d) = self.jobs[j].boundary else {
                unreachable!()
            };
            self.jobs[j].boundary = BoundaryState::InFlight;
            let r = self.jobs[j].request;
            self.start_op(channel, r, Some(j), Work::Boundary, 0, d, claims);
            return Ok(true);
        }

        let candidates: Vec<usize> = self.active_jobs(stage).filter(|&j| self.io_allowed(j)).collect();
        if candidates.is_empty() {
            return Ok(false);
        }
        let pick = match self.policy.scheduling.io_priority {
            p @ (IoPriority::LongestRemainingFirst | IoPriority::ShortestFirst) => *candidates
                .iter()
                .min_by(|&&a, &&b| {
                    rank_cmp(
                        p,
                        (self.work_of(a), self.reqs[self.jobs[a].request].request.id),
                        (self.work_of(b), self.reqs[self.jobs[b].request].request.id),
                    )
                })
                .expect("nonempty"),
            IoPriority::RoundRobin => {
                let cursor = self.io_cursor[stage];
                let next = self.round_robin(&candidates, cursor);
                self.io_cursor[stage] = self.jobs[next].request;
                next
            }
            IoPriority::Random { .. } => candidates[self.rng.random_range(0..candidates.len())],
        };
        self.claim_unit(pick, channel, claims)?;
        Ok(true)
    }

    fn round_robin(&self, candidates: &[usize], cursor: usize) -> usize {
        // candidates are in request order; take the first after the cursor, else wrap
        candidates
            .iter()
            .copied()
            .find(|&j| cursor == usize::MAX || self.jobs[j].request > cursor)
            .unwrap_or(candidates[0])
    }

    fn try_compute(&mut self, stage: usize, claims: &mut Vec<Claim>) -> Result<bool> {
        let channel = ChannelId::Compute { stage };
        // a ready prefill takes its request's turn in the rotation
        let mut turns: Vec<(usize, Option<usize>)> = self
            .active_jobs(stage)
            .filter(|&j| self.compute_allowed(j))
            .map(|j| (self.jobs[j].request, Some(j)))
            .collect();
        turns.extend(
            self.prefill_queue[stage]
                .iter()
                .filter(|&&(ready, _)| ready <= self.now)
                .map(|&(_, r)| (r, None)),
        );
        if turns.is_empty() {
            return Ok(false);
        }
        turns.sort_unstable();
        let cursor = self.compute_cursor[stage];
        let (r, job) = turns
            .iter()
            .copied()
            .find(|&(r, _)| cursor == usize::MAX || r > cursor)
            .unwrap_or(turns[0]);
        self.compute_cursor[stage] = r;
        match job {
            Some(j) => self.claim_unit(j, channel, claims)?,
            None => {
                self.prefill_queue[stage].retain(|&(_, q)| q != r);
                let d = self.reqs[r].prefill[stage];
                self.start_op(channel, r, None, Work::Prefill, 0, d, claims);
            }
        }
        Ok(true)
    }

    fn claim_unit(&mut self, j: usize, channel: ChannelId, claims: &mut Vec<Claim>) -> Result<()> {
        let job = &mut self.jobs[j];
        if !job.has_units() {
            return Err(Error::InconsistentState(format!(
                "claim on exhausted job of request index {}",
                job.request
            )));
        }
        let (work, unit, duration) = match channel {
            ChannelId::Io { .. } => {
                job.hi -= 1;
                (Work::Load, job.hi, job.units.io[job.hi])
            }
            ChannelId::Compute { .. } => {
                job.lo += 1;
                (Work::Recompute, job.lo - 1, job.units.compute[job.lo - 1])
            }
        };
        job.claims[unit] += 1;
        if job.claims[unit] > 1 || job.lo > job.hi {
            return Err(Error::InconsistentState(format!(
                "unit {unit} of request index {} claimed twice (p_comp {}, p_io {})",
                job.request,
                job.lo as i64,
                job.hi as i64 - 1
            )));
        }
        job.in_flight += 1;
        let r = job.request;
        self.start_op(channel, r, Some(j), work, unit, duration, claims);
        Ok(())
    }

    /// Breaks a stall where every channel declined: the idle side that would
    /// finish the next unit first takes it.
    fn force_claim(&mut self, claims: &mut Vec<Claim>) -> Result<()> {
        let stages = self.compute.len();
        for s in 0..stages {
            let jobs: Vec<usize> = self.active_jobs(s).collect();
            let Some(&j) = jobs.first() else { continue };
            let job = &self.jobs[j];
            let io_idle = (0..self.io[s].len()).find(|&k| self.io[s][k].op.is_none());
            let compute_idle = self.compute[s].op.is_none();
            let io_cost = job.units.io[job.hi - 1];
            let comp_cost = job.units.compute[job.lo];
            let channel = match (io_idle, compute_idle) {
                (Some(k), true) if io_cost <= comp_cost => ChannelId::Io { stage: s, index: k },
                (_, true) => ChannelId::Compute { stage: s },
                (Some(k), false) => ChannelId::Io { stage: s, index: k },
                (None, false) => continue,
            };
            self.forced += 1;
            self.claim_unit(j, channel, claims)?;
            return Ok(());
        }
        Err(Error::InconsistentState(
            "scheduler stalled with unclaimed units and no runnable channel".into(),
        ))
    }

    /// Snapshot of results so far; complete once `step` has returned `None`.
    pub fn outcome(&self) -> EngineOutcome {
        let requests: Vec<RequestTiming> = self
            .reqs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let arrival = self.arrival_of(i);
                let restore_finish = r.restore_finish.unwrap_or(f64::NAN);
                RequestTiming {
                    request_id: r.request.id,
                    arrival,
                    strategy: r.strategy,
                    restore_start: r.restore_start.unwrap_or(restore_finish),
                    restore_finish,
                    first_token: if self.options.prefill {
                        r.ttft_end.unwrap_or(f64::NAN)
                    } else {
                        restore_finish
                    },
                }
            })
            .collect();
        let mut channels = Vec::new();
        for (s, c) in self.compute.iter().enumerate() {
            channels.push(ChannelUsage {
                channel: ChannelId::Compute { stage: s },
                intervals: c.intervals.clone(),
            });
        }
        for (s, row) in self.io.iter().enumerate() {
            for (k, c) in row.iter().enumerate() {
                channels.push(ChannelUsage {
                    channel: ChannelId::Io { stage: s, index: k },
                    intervals: c.intervals.clone(),
                });
            }
        }
        let makespan = requests
            .iter()
            .map(|r| r.first_token)
            .filter(|t| t.is_finite())
            .fold(0.0, f64::max);
        EngineOutcome {
            requests,
            channels,
            trace: self.trace.clone(),
            makespan,
            forced_claims: self.forced,
        }
    }
}

/// Result of restoring one batch, all requests present at time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    /// `(request id, restoration finish)` in input order.
    pub finishes: Vec<(u64, f64)>,
    pub makespan: f64,
    pub trace: Vec<Claim>,
    pub forced_claims: usize,
}

/// Restores a batch to completion with the given policy.
pub fn run_batch_schedule(
    requests: &[Request],
    setup: &RestorationSetup,
    pool: ResourcePool,
    policy: RestorationPolicy,
) -> Result<BatchOutcome> {
    if requests.is_empty() {
        return Err(Error::invalid("batch is empty"));
    }
    let outcome = Engine::new(setup, pool, policy, requests, EngineOptions::batch())?.run()?;
    Ok(BatchOutcome {
        finishes: outcome
            .requests
            .iter()
            .map(|r| (r.request_id, r.restore_finish))
            .collect(),
        makespan: outcome.makespan,
        trace: outcome.trace,
        forced_claims: outcome.forced_claims,
    })
}

/// Largest instance accepted by [`exhaustive_schedule_oracle`].
pub const ORACLE_MAX_REQUESTS: usize = 3;
pub const ORACLE_MAX_UNITS: usize = 4;

/// Optimal makespan of a tiny batch on one compute and one I/O channel.
///
/// Units on each side carry no cross-side dependencies, so once every
/// request's contiguous split is fixed both channels can run back to back and
/// the makespan is `max(Σ recompute, Σ load)` whatever the service order. The
/// search therefore covers every I/O service sequence by enumerating all
/// split vectors.
pub fn exhaustive_schedule_oracle(batch: &[UnitCosts]) -> Result<f64> {
    if batch.len() > ORACLE_MAX_REQUESTS || batch.iter().any(|u| u.len() > ORACLE_MAX_UNITS) {
        return Err(Error::InstanceTooLarge(format!(
            "at most {ORACLE_MAX_REQUESTS} requests of {ORACLE_MAX_UNITS} units"
        )));
    }
    fn search(batch: &[UnitCosts], i: usize, compute: f64, io: f64, best: &mut f64) {
        if i == batch.len() {
            *best = best.min(compute.max(io));
            return;
        }
        let u = &batch[i];
        let n = u.len();
        for s in 0..=n {
            search(
                batch,
                i + 1,
                compute + range_sum(&u.compute, 0..s),
                io + range_sum(&u.io, s..n),
                best,
            );
        }
    }
    let mut best = f64::INFINITY;
    search(batch, 0, 0.0, 0.0, &mut best);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{brute_force_best_split, RestorationPlan};
    use crate::planner::Strategy;
    use proptest::prelude::*;

    /// One layer of 1 KV byte per token, flat compute, so a request of `n`
    /// chunks of one token each has per-chunk compute `c` and I/O `io`.
    fn flat_setup(c: f64, io: f64) -> RestorationSetup {
        let spec = ModelSpec::new(1, 1, 1, 1, 1).unwrap();
        let compute = ComputeCostModel::new(0.0, c, 0.0).unwrap();
        // 2 bytes per token-layer
        let io = IoCostModel::new(2.0 / io, 0.0).unwrap();
        let mut s = RestorationSetup::single_stage(spec, compute, io);
        s.chunk_size = 1;
        s
    }

    fn req(id: u64, prefix: u64) -> Request {
        Request::new(id, 0.0, prefix, 1).unwrap()
    }

    fn lrf() -> RestorationPolicy {
        RestorationPolicy::two_pointer(SchedulingPolicy::default())
    }

    #[test]
    fn init_batch_pointers() {
        let spec = ModelSpec::new(32, 8, 128, 1024, 2).unwrap();
        let compute = ComputeCostModel::new(0.01, 1e-5, 1e-9).unwrap();
        let st = init_batch(&[req(0, 2048)], Some(1024), 512, &spec, &compute).unwrap();
        let p = st.pointers[0];
        assert_eq!((p.strategy, p.p_comp, p.p_io, p.complete), (Strategy::TokenWise, 0, 3, false));
        assert!((p.remaining_recompute_cost - compute.cost(2048)).abs() < 1e-12);
        let st = init_batch(&[req(0, 256)], Some(1024), 512, &spec, &compute).unwrap();
        let p = st.pointers[0];
        assert_eq!((p.strategy, p.p_comp, p.p_io), (Strategy::LayerWise, 0, 31));
        let st = init_batch(&[req(0, 0)], Some(1024), 512, &spec, &compute).unwrap();
        assert!(st.pointers[0].complete);
        assert!(init_batch(&[], None, 512, &spec, &compute).is_err());
    }

    fn state_of(costs: &[(u64, f64)]) -> BatchState {
        BatchState {
            pointers: costs
                .iter()
                .map(|&(id, c)| PointerState {
                    request_id: id,
                    stage: 0,
                    strategy: Strategy::TokenWise,
                    p_comp: 0,
                    p_io: 3,
                    remaining_recompute_cost: c,
                    complete: false,
                })
                .collect(),
        }
    }

    #[test]
    fn io_targets() {
        let one = ResourcePool::default();
        let policy = SchedulingPolicy::default();
        assert_eq!(pick_io_targets(&state_of(&[(0, 0.9), (1, 0.3)]), &one, &policy), vec![0]);
        assert_eq!(pick_io_targets(&state_of(&[(0, 0.3), (1, 0.9)]), &one, &policy), vec![1]);
        assert_eq!(pick_io_targets(&state_of(&[(0, 0.5), (1, 0.5)]), &one, &policy), vec![0]);
        let many = ResourcePool {
            io_channels: 5,
            ..one
        };
        let mut all = pick_io_targets(&state_of(&[(0, 0.5), (1, 0.2), (2, 0.9)]), &many, &policy);
        assert_eq!(all, vec![2, 0, 1]);
        all.sort();
        let rnd = SchedulingPolicy::with_priority(IoPriority::Random { seed: 3 });
        let mut picked = pick_io_targets(&state_of(&[(0, 0.5), (1, 0.2), (2, 0.9)]), &many, &rnd);
        picked.sort();
        assert_eq!(picked, all);
        let sf = SchedulingPolicy::with_priority(IoPriority::ShortestFirst);
        assert_eq!(pick_io_targets(&state_of(&[(0, 0.9), (1, 0.3)]), &one, &sf), vec![1]);
    }

    #[test]
    fn batch_of_one_matches_planner() {
        let setup = flat_setup(1.0, 2.0);
        let r = req(0, 4);
        let out = run_batch_schedule(&[r], &setup, ResourcePool::default(), lrf()).unwrap();
        let units = setup.stage_units(&r, 0, Strategy::TokenWise).unwrap();
        let plan = RestorationPlan::two_pointer(Strategy::TokenWise, &units);
        assert_eq!(out.finishes, vec![(0, plan.predicted_finish)]);
        assert_eq!(out.makespan, plan.predicted_finish);
    }

    #[test]
    fn io_alternates_between_equal_requests() {
        let setup = flat_setup(1.0, 1.0);
        let out = run_batch_schedule(&[req(0, 4), req(1, 4)], &setup, ResourcePool::default(), lrf()).unwrap();
        let loads: Vec<u64> = out
            .trace
            .iter()
            .filter(|c| c.work == Work::Load)
            .map(|c| c.request_id)
            .collect();
        assert!(loads.len() >= 2);
        for w in loads.windows(2) {
            assert_ne!(w[0], w[1], "{loads:?}");
        }
    }

    #[test]
    fn long_request_gets_early_io() {
        // quadratic compute makes the long request's tail the most expensive work
        let spec = ModelSpec::new(1, 1, 1, 1, 1).unwrap();
        let compute = ComputeCostModel::new(0.0, 0.0, 0.05).unwrap();
        let io = IoCostModel::new(2.0, 0.0).unwrap();
        let mut setup = RestorationSetup::single_stage(spec, compute, io);
        setup.chunk_size = 1;
        let out = run_batch_schedule(&[req(0, 8), req(1, 2)], &setup, ResourcePool::default(), lrf()).unwrap();
        let loads: Vec<&Claim> = out.trace.iter().filter(|c| c.work == Work::Load).collect();
        assert!(!loads.is_empty());
        let first_short = loads.iter().position(|c| c.request_id == 1);
        let long_loads = loads.iter().filter(|c| c.request_id == 0).count();
        assert!(long_loads >= 2);
        if let Some(p) = first_short {
            assert!(p >= 2, "{loads:?}");
        }
    }

    #[test]
    fn symmetric_requests_finish_together() {
        let setup = flat_setup(1.0, 1.5);
        let pool = ResourcePool {
            io_channels: 2,
            ..Default::default()
        };
        let out = run_batch_schedule(&[req(0, 8), req(1, 8)], &setup, pool, lrf()).unwrap();
        let (a, b) = (out.finishes[0].1, out.finishes[1].1);
        assert!((a - b).abs() <= 1.5, "{a} vs {b}");
    }

    #[test]
    fn longest_first_beats_shortest_first_on_small_instance() {
        let setup = flat_setup(1.0, 1.0);
        let batch = [req(0, 4), req(1, 2)];
        let run = |p: IoPriority| {
            run_batch_schedule(&batch, &setup, ResourcePool::default(), RestorationPolicy::two_pointer(SchedulingPolicy::with_priority(p)))
                .unwrap()
                .makespan
        };
        let units: Vec<UnitCosts> = batch
            .iter()
            .map(|r| setup.stage_units(r, 0, Strategy::TokenWise).unwrap())
            .collect();
        let opt = exhaustive_schedule_oracle(&units).unwrap();
        assert_eq!(opt, 3.0);
        let lf = run(IoPriority::LongestRemainingFirst);
        assert!(lf <= run(IoPriority::ShortestFirst));
        assert!(opt <= lf);
    }

    #[test]
    fn oracle_examples() {
        let single = UnitCosts::new(vec![1.0, 2.0, 3.0, 4.0], vec![2.0; 4]).unwrap();
        let best = brute_force_best_split(&single.compute, &single.io).unwrap().1;
        assert_eq!(exhaustive_schedule_oracle(std::slice::from_ref(&single)).unwrap(), best);
        let inf = UnitCosts::new(vec![1.0, 2.0], vec![f64::INFINITY; 2]).unwrap();
        assert_eq!(exhaustive_schedule_oracle(&[inf.clone(), inf]).unwrap(), 6.0);
        let big = UnitCosts::new(vec![1.0; 5], vec![1.0; 5]).unwrap();
        assert!(matches!(exhaustive_schedule_oracle(&[big]), Err(Error::InstanceTooLarge(_))));
    }

    #[test]
    fn baselines_respect_exclusivity() {
        let setup = flat_setup(1.0, 1.0);
        let batch = [req(0, 5), req(1, 3)];
        for (d, forbidden) in [(Discipline::RecomputeOnly, Work::Load), (Discipline::LoadOnly, Work::Recompute)] {
            let policy = RestorationPolicy {
                discipline: d,
                scheduling: SchedulingPolicy::default(),
            };
            let out = run_batch_schedule(&batch, &setup, ResourcePool::default(), policy).unwrap();
            assert!(out.trace.iter().all(|c| c.work != forbidden));
            assert_eq!(out.trace.len(), 8);
        }
    }

    #[test]
    fn static_split_uses_closed_form() {
        let setup = flat_setup(3.0, 1.0);
        let policy = RestorationPolicy {
            discipline: Discipline::StaticSplit,
            scheduling: SchedulingPolicy::with_priority(IoPriority::RoundRobin),
        };
        let out = run_batch_schedule(&[req(0, 8)], &setup, ResourcePool::default(), policy).unwrap();
        // split = 8 · 8/(24 + 8) = 2 units recomputed
        let recomputed = out.trace.iter().filter(|c| c.work == Work::Recompute).count();
        assert_eq!(recomputed, 2);
        assert_eq!(out.makespan, 6.0);
    }

    #[test]
    fn fair_share_stretches_concurrent_transfers() {
        let setup = flat_setup(100.0, 1.0);
        let pool = ResourcePool {
            io_channels: 2,
            sharing: IoSharing::FairShare,
        };
        let policy = RestorationPolicy {
            discipline: Discipline::LoadOnly,
            scheduling: SchedulingPolicy::default(),
        };
        let out = run_batch_schedule(&[req(0, 2), req(1, 2)], &setup, pool, policy).unwrap();
        // four one-second transfers over a link shared two ways
        assert!((out.makespan - 4.0).abs() < 1e-9, "{}", out.makespan);
        let dedicated = run_batch_schedule(
            &[req(0, 2), req(1, 2)],
            &setup,
            ResourcePool { io_channels: 2, sharing: IoSharing::Dedicated },
            policy,
        )
        .unwrap();
        assert!((dedicated.makespan - 2.0).abs() < 1e-9);
    }

    #[test]
    fn step_reports_claims_and_state() {
        let setup = flat_setup(1.0, 2.0);
        let mut e = Engine::new(&setup, ResourcePool::default(), lrf(), &[req(0, 4)], EngineOptions::batch()).unwrap();
        let first = e.step().unwrap().unwrap();
        assert_eq!(first.len(), 2);
        assert_eq!(first[0].work, Work::Load);
        assert_eq!(first[0].unit, 3);
        assert_eq!(first[1].work, Work::Recompute);
        let st = e.state();
        assert_eq!((st.pointers[0].p_comp, st.pointers[0].p_io), (1, 2));
        while e.step().unwrap().is_some() {}
        assert!(e.state().pointers[0].complete);
    }

    #[test]
    fn rejects_duplicate_ids() {
        let setup = flat_setup(1.0, 1.0);
        assert!(matches!(
            run_batch_schedule(&[req(3, 1), req(3, 2)], &setup, ResourcePool::default(), lrf()),
            Err(Error::DuplicateId(3))
        ));
    }

    proptest! {
        #[test]
        fn runs_claim_every_unit_once(
            prefixes in prop::collection::vec(0u64..12, 1..8),
            c in 0.1f64..3.0, io in 0.1f64..3.0, k in 1usize..3,
            prio in 0u8..4)
        {
            let setup = flat_setup(c, io);
            let batch: Vec<Request> = prefixes.iter().enumerate().map(|(i, &n)| req(i as u64, n)).collect();
            let io_priority = match prio {
                0 => IoPriority::LongestRemainingFirst,
                1 => IoPriority::ShortestFirst,
                2 => IoPriority::RoundRobin,
                _ => IoPriority::Random { seed: 9 },
            };
            let pool = ResourcePool { io_channels: k, ..Default::default() };
            let out = run_batch_schedule(&batch, &setup, pool,
                RestorationPolicy::two_pointer(SchedulingPolicy::with_priority(io_priority))).unwrap();
            let total: u64 = prefixes.iter().sum();
            prop_assert_eq!(out.trace.len() as u64, total);
            let mut seen = std::collections::HashSet::new();
            for claim in &out.trace {
                prop_assert!(seen.insert((claim.request_id, claim.unit)));
            }
        }
    }
}
