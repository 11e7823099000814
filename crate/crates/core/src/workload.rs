//! Synthetic workloads, trace files and the baseline policies they are run against.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::cost::csv_parse_error;
use crate::error::{Error, Result};
use crate::model::Request;
use crate::sim::Policy;

/// Token range `[start, end)` drawn with relative `weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub bucket_start: u64,
    pub bucket_end: u64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LengthDistribution {
    Fixed { tokens: u64 },
    /// Inclusive integer range.
    Uniform { min: u64, max: u64 },
    /// Parameterized by the mean and standard deviation of the lengths themselves.
    LogNormal { mean: f64, std_dev: f64 },
    Histogram { buckets: Vec<HistogramBucket> },
}

enum Sampler {
    Fixed(u64),
    Uniform(u64, u64),
    LogNormal(LogNormal<f64>),
    Histogram(WeightedIndex<f64>, Vec<HistogramBucket>),
}

impl Sampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            Sampler::Fixed(n) => *n,
            Sampler::Uniform(lo, hi) => rng.random_range(*lo..=*hi),
            Sampler::LogNormal(d) => d.sample(rng).round() as u64,
            Sampler::Histogram(index, buckets) => {
                let b = buckets[index.sample(rng)];
                if b.bucket_end > b.bucket_start + 1 {
                    rng.random_range(b.bucket_start..b.bucket_end)
                } else {
                    b.bucket_start
                }
            }
        }
    }
}

impl LengthDistribution {
    fn sampler(&self) -> Result<Sampler> {
        Ok(match self {
            LengthDistribution::Fixed { tokens } => Sampler::Fixed(*tokens),
            LengthDistribution::Uniform { min, max } => {
                if min > max {
                    return Err(Error::invalid(format!("uniform range {min}..={max} is empty")));
                }
                Sampler::Uniform(*min, *max)
            }
            LengthDistribution::LogNormal { mean, std_dev } => {
                if !(*mean > 0.0) || !(*std_dev >= 0.0) || !mean.is_finite() || !std_dev.is_finite() {
                    return Err(Error::invalid("lognormal needs mean > 0 and std_dev >= 0"));
                }
                let sigma2 = (1.0 + (std_dev / mean).powi(2)).ln();
                let mu = mean.ln() - sigma2 / 2.0;
                Sampler::LogNormal(
                    LogNormal::new(mu, sigma2.sqrt()).map_err(|e| Error::invalid(e.to_string()))?,
                )
            }
            LengthDistribution::Histogram { buckets } => {
                if buckets.iter().any(|b| b.bucket_end < b.bucket_start || !(b.weight >= 0.0)) {
                    return Err(Error::invalid("histogram buckets need start <= end and weight >= 0"));
                }
                let index = WeightedIndex::new(buckets.iter().map(|b| b.weight))
                    .map_err(|e| Error::invalid(format!("histogram weights: {e}")))?;
                Sampler::Histogram(index, buckets.clone())
            }
        })
    }

    /// Reads `bucket_start,bucket_end,weight` lines under a header of the same names.
    pub fn load_histogram(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let buckets = reader
            .deserialize::<HistogramBucket>()
            .map(|r| r.map_err(|e| csv_parse_error(path, e)))
            .collect::<Result<Vec<_>>>()?;
        let dist = LengthDistribution::Histogram { buckets };
        dist.sampler()?;
        Ok(dist)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArrivalProcess {
    /// Every request arrives at time 0.
    FixedBatch,
    /// Exponential inter-arrival gaps at `rate` requests per second.
    Poisson { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub prefix_tokens: LengthDistribution,
    pub new_tokens: LengthDistribution,
    pub arrivals: ArrivalProcess,
    pub count: usize,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn fixed_batch(prefix_tokens: LengthDistribution, count: usize, seed: u64) -> Self {
        Self {
            prefix_tokens,
            new_tokens: LengthDistribution::Fixed { tokens: 128 },
            arrivals: ArrivalProcess::FixedBatch,
            count,
            seed,
        }
    }
}

/// Deterministic trace for `spec`, sorted by arrival; ids are `0..count`.
/// New-token counts are raised to at least one.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<Request>> {
    let prefix = spec.prefix_tokens.sampler()?;
    let new_tokens = spec.new_tokens.sampler()?;
    let gaps = match spec.arrivals {
        ArrivalProcess::FixedBatch => None,
        ArrivalProcess::Poisson { rate } => {
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(Error::invalid(format!("arrival rate must be positive (got {rate})")));
            }
            Some(Exp::new(rate).map_err(|e| Error::invalid(e.to_string()))?)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut now = 0.0;
    let mut trace = Vec::with_capacity(spec.count);
    for id in 0..spec.count as u64 {
        if let Some(gap) = &gaps {
            now += gap.sample(&mut rng);
        }
        let n = prefix.sample(&mut rng);
        let m = new_tokens.sample(&mut rng).max(1);
        trace.push(Request::new(id, now, n, m)?);
    }
    Ok(trace)
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    id: u64,
    arrival_seconds: f64,
    cached_prefix_tokens: u64,
    new_tokens: u64,
}

/// Parses trace text with header `id,arrival_seconds,cached_prefix_tokens,new_tokens`.
/// `origin` names the source in errors.
pub fn parse_trace(text: &str, origin: &Path) -> Result<Vec<Request>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_parse_error(origin, e))?.clone();
    let expected = ["id", "arrival_seconds", "cached_prefix_tokens", "new_tokens"];
    if headers.iter().ne(expected) {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut seen = std::collections::HashSet::new();
    let mut trace = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_parse_error(origin, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let rec: TraceRecord = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        let req = Request::new(rec.id, rec.arrival_seconds, rec.cached_prefix_tokens, rec.new_tokens)
            .map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        if !seen.insert(req.id) {
            return Err(Error::DuplicateId(req.id));
        }
        trace.push(req);
    }
    Ok(trace)
}

pub fn load_trace(path: &Path) -> Result<Vec<Request>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, path)
}

pub fn trace_to_text(trace: &[Request]) -> String {
    let mut out = String::from("id,arrival_seconds,cached_prefix_tokens,new_tokens\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.id, r.arrival_time, r.cached_prefix_tokens, r.new_tokens
        ));
    }
    out
}

pub fn store_trace(trace: &[Request], path: &Path) -> Result<()> {
    fs::write(path, trace_to_text(trace)).map_err(|e| Error::io(path, e))
}

/// Single-resource and static-split restoration baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselinePolicy {
    /// Plain prefill over the whole prefix; never loads.
    RecomputeOnly,
    /// Loads every cached unit; never recomputes.
    LoadOnly,
    /// Fixed per-request token split with no batch awareness.
    TokenHybridStatic,
}

impl BaselinePolicy {
    pub const ALL: [BaselinePolicy; 3] = [
        BaselinePolicy::RecomputeOnly,
        BaselinePolicy::LoadOnly,
        BaselinePolicy::TokenHybridStatic,
    ];
}

impl From<BaselinePolicy> for Policy {
    fn from(b: BaselinePolicy) -> Policy {
        match b {
            BaselinePolicy::RecomputeOnly => Policy::RecomputeOnly,
            BaselinePolicy::LoadOnly => Policy::LoadOnly,
            BaselinePolicy::TokenHybridStatic => Policy::StaticHybrid,
        }
    }
}
