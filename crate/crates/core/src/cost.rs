//! Latency models for recomputation and KV transfer, plus offline calibration.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Chunking;

/// Recompute latency of a full forward pass over `n` tokens:
/// `fixed_overhead + linear_coeff·n + quad_coeff·n²`, and zero when `n = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeCostModel {
    pub fixed_overhead: f64,
    pub linear_coeff: f64,
    pub quad_coeff: f64,
}

impl ComputeCostModel {
    pub fn new(fixed_overhead: f64, linear_coeff: f64, quad_coeff: f64) -> Result<Self> {
        let m = Self {
            fixed_overhead,
            linear_coeff,
            quad_coeff,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fixed_overhead", self.fixed_overhead),
            ("linear_coeff", self.linear_coeff),
            ("quad_coeff", self.quad_coeff),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and >= 0 (got {v})")));
            }
        }
        Ok(())
    }

    /// Full-model cost of `tokens`.
    pub fn cost(&self, tokens: u64) -> f64 {
        if tokens == 0 {
            return 0.0;
        }
        let n = tokens as f64;
        self.fixed_overhead + self.linear_coeff * n + self.quad_coeff * n * n
    }

    /// Cost of the given fraction of layers; `layer_fraction` must lie in `(0, 1]`.
    pub fn cost_fraction(&self, tokens: u64, layer_fraction: f64) -> Result<f64> {
        check_fraction(layer_fraction)?;
        Ok(layer_fraction * self.cost(tokens))
    }

    /// Marginal cost of extending an already computed context of `from` tokens to `to` tokens.
    pub fn extension_cost(&self, from: u64, to: u64) -> f64 {
        debug_assert!(from <= to);
        self.cost(to) - self.cost(from)
    }
}

pub(crate) fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("layer fraction must lie in (0, 1] (got {f})")))
    }
}

pub fn compute_cost(model: &ComputeCostModel, tokens: u64, layer_fraction: f64) -> Result<f64> {
    model.cost_fraction(tokens, layer_fraction)
}

/// Cost of recomputing chunk `chunk_index` given that every earlier chunk is already present.
/// Summed over all chunks this telescopes to the cost of the whole prefix.
pub fn incremental_chunk_compute_cost(
    model: &ComputeCostModel,
    chunking: &Chunking,
    chunk_index: usize,
    layer_fraction: f64,
) -> Result<f64> {
    check_fraction(layer_fraction)?;
    if chunk_index >= chunking.num_chunks {
        return Err(Error::OutOfRange {
            index: chunk_index,
            len: chunking.num_chunks,
        });
    }
    let from = chunking.tokens_before(chunk_index);
    let to = chunking.tokens_before(chunk_index + 1);
    Ok(layer_fraction * model.extension_cost(from, to))
}

/// Transfer latency: `per_transfer_overhead + bytes / bandwidth`, zero for an empty transfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoCostModel {
    /// Bytes per second.
    pub bandwidth: f64,
    pub per_transfer_overhead: f64,
}

impl IoCostModel {
    pub fn new(bandwidth: f64, per_transfer_overhead: f64) -> Result<Self> {
        let m = Self {
            bandwidth,
            per_transfer_overhead,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_gbps(gbps: f64) -> Result<Self> {
        Self::new(gbps * 1e9 / 8.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be > 0 (got {})", self.bandwidth)));
        }
        if !(self.per_transfer_overhead >= 0.0) || !self.per_transfer_overhead.is_finite() {
            return Err(Error::invalid("per_transfer_overhead must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn cost(&self, bytes: u64) -> f64 {
        if bytes == 0 {
            return 0.0;
        }
        self.per_transfer_overhead + bytes as f64 / self.bandwidth
    }

    /// Same link with bandwidth divided between `ways` users.
    pub fn shared(&self, ways: usize) -> Self {
        Self {
            bandwidth: self.bandwidth / ways.max(1) as f64,
            ..*self
        }
    }
}

pub fn io_cost(model: &IoCostModel, bytes: u64) -> f64 {
    model.cost(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Compute,
    Io,
}

/// One profiled measurement; `size` is tokens for compute and bytes for I/O.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub kind: SampleKind,
    pub size: u64,
    pub seconds: f64,
}

/// Offline measurements used to fit the cost models.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationProfile {
    pub hardware_label: String,
    pub samples: Vec<ProfileSample>,
}

const HARDWARE_PREFIX: &str = "# hardware:";

impl CalibrationProfile {
    pub fn compute_samples(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.samples
            .iter()
            .filter(|s| s.kind == SampleKind::Compute)
            .map(|s| (s.size, s.seconds))
    }

    pub fn io_samples(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.samples
            .iter()
            .filter(|s| s.kind == SampleKind::Io)
            .map(|s| (s.size, s.seconds))
    }

    /// Builds a noiseless profile by evaluating known models at the given sizes.
    pub fn synthetic(
        label: &str,
        compute: &ComputeCostModel,
        io: &IoCostModel,
        token_counts: &[u64],
        byte_counts: &[u64],
    ) -> Self {
        let mut samples: Vec<_> = token_counts
            .iter()
            .map(|&n| ProfileSample {
                kind: SampleKind::Compute,
                size: n,
                seconds: compute.cost(n),
            })
            .collect();
        samples.extend(byte_counts.iter().map(|&b| ProfileSample {
            kind: SampleKind::Io,
            size: b,
            seconds: io.cost(b),
        }));
        Self {
            hardware_label: label.to_string(),
            samples,
        }
    }

    /// Parses the profile text format:
    ///
    /// ```text
    /// # hardware: H100 / 10 Gbps NIC
    /// kind,size,seconds
    /// compute,512,0.021
    /// io,75497472,0.0604
    /// ```
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut hardware_label = String::new();
        for line in text.lines() {
            if let Some(rest) = line.trim().strip_prefix(HARDWARE_PREFIX) {
                hardware_label = rest.trim().to_string();
                break;
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut samples = Vec::new();
        for record in reader.deserialize::<ProfileSample>() {
            let sample = record.map_err(|e| csv_parse_error(origin, e))?;
            if !(sample.seconds >= 0.0) || !sample.seconds.is_finite() {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: 0,
                    message: format!("negative or non-finite seconds for size {}", sample.size),
                });
            }
            samples.push(sample);
        }
        Ok(Self {
            hardware_label,
            samples,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.hardware_label.is_empty() {
            out.push_str(&format!("{HARDWARE_PREFIX} {}\n", self.hardware_label));
        }
        out.push_str("kind,size,seconds\n");
        for s in &self.samples {
            let kind = match s.kind {
                SampleKind::Compute => "compute",
                SampleKind::Io => "io",
            };
            out.push_str(&format!("{kind},{},{}\n", s.size, s.seconds));
        }
        out
    }

    pub fn store(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_parse_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Fit quality for each model: root-mean-square and worst-case relative residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResiduals {
    pub compute_rms_rel: f64,
    pub compute_max_rel: f64,
    pub io_rms_rel: f64,
    pub io_max_rel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedModels {
    pub compute: ComputeCostModel,
    pub io: IoCostModel,
    pub residuals: FitResiduals,
}

/// Least-squares fit of both models. Residuals are weighted by the measurement so
/// that short and long samples count equally; coefficients are constrained to be
/// non-negative by searching over active sets.
pub fn fit_cost_models(profile: &CalibrationProfile) -> Result<FittedModels> {
    let compute: Vec<(u64, f64)> = profile.compute_samples().filter(|&(n, _)| n > 0).collect();
    let io: Vec<(u64, f64)> = profile.io_samples().filter(|&(b, _)| b > 0).collect();

    let distinct = |xs: &[(u64, f64)]| {
        let mut sizes: Vec<u64> = xs.iter().map(|s| s.0).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes.len()
    };
    if distinct(&compute) < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 compute samples with distinct token counts (got {})",
            distinct(&compute)
        )));
    }
    if distinct(&io) < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 io samples with distinct byte counts (got {})",
            distinct(&io)
        )));
    }
    if compute.iter().chain(&io).any(|s| !(s.1 > 0.0)) {
        return Err(Error::DegenerateFit("measured seconds must be positive".into()));
    }

    let c = nonneg_least_squares(&compute, &[|_| 1.0, |n| n, |n| n * n])?;
    let compute_model = ComputeCostModel::new(c[0], c[1], c[2])?;

    let i = nonneg_least_squares(&io, &[|_| 1.0, |b| b])?;
    if !(i[1] > 0.0) {
        return Err(Error::DegenerateFit("io time does not grow with size".into()));
    }
    let io_model = IoCostModel::new(1.0 / i[1], i[0])?;

    let (compute_rms_rel, compute_max_rel) =
        relative_residuals(&compute, |n| compute_model.cost(n));
    let (io_rms_rel, io_max_rel) = relative_residuals(&io, |b| io_model.cost(b));
    Ok(FittedModels {
        compute: compute_model,
        io: io_model,
        residuals: FitResiduals {
            compute_rms_rel,
            compute_max_rel,
            io_rms_rel,
            io_max_rel,
        },
    })
}

fn relative_residuals(samples: &[(u64, f64)], eval: impl Fn(u64) -> f64) -> (f64, f64) {
    let rel: Vec<f64> = samples
        .iter()
        .map(|&(x, y)| ((eval(x) - y) / y).abs())
        .collect();
    let rms = (rel.iter().map(|r| r * r).sum::<f64>() / rel.len() as f64).sqrt();
    let max = rel.iter().copied().fold(0.0, f64::max);
    (rms, max)
}

/// Minimizes Σ((Σ_j c_j·basis_j(x) − y)/y)² subject to c ≥ 0 by exhaustive active-set search.
fn nonneg_least_squares(samples: &[(u64, f64)], basis: &[fn(f64) -> f64]) -> Result<Vec<f64>> {
    let k = basis.len();
    let rows = samples.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << k) {
        let cols: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let mut a = DMatrix::<f64>::zeros(rows, cols.len());
        let b = DVector::<f64>::from_element(rows, 1.0);
        for (r, &(x, y)) in samples.iter().enumerate() {
            for (c, &j) in cols.iter().enumerate() {
                a[(r, c)] = basis[j](x as f64) / y;
            }
        }
        // column scaling keeps the n and n² columns comparable
        let scale: Vec<f64> = (0..cols.len()).map(|c| a.column(c).norm()).collect();
        if scale.iter().any(|&s| !(s > 0.0)) {
            continue;
        }
        for (c, s) in scale.iter().enumerate() {
            a.column_mut(c).scale_mut(1.0 / s);
        }
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= smax * 1e-12 {
            if cols.len() == k {
                return Err(Error::DegenerateFit("design matrix is rank deficient".into()));
            }
            continue;
        }
        let sol = match svd.solve(&b, 0.0) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let coeffs: Vec<f64> = sol.iter().zip(&scale).map(|(v, s)| v / s).collect();
        if coeffs.iter().any(|&v| v < 0.0) {
            continue;
        }
        let resid = (&a * &sol - &b).norm_squared();
        let mut full = vec![0.0; k];
        for (c, &j) in cols.iter().enumerate() {
            full[j] = coeffs[c];
        }
        if best.as_ref().is_none_or(|(r, _)| resid < *r) {
            best = Some((resid, full));
        }
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| Error::DegenerateFit("no non-negative solution".into()))
}

/// Powers of two from 64 to 32768 tokens.
pub fn default_crossover_sweep() -> Vec<u64> {
    (6..=15).map(|p| 1u64 << p).collect()
}

/// Smallest sweep point at which the token-wise curve is no slower than the layer-wise one.
pub fn crossover_threshold(
    token_curve: impl Fn(u64) -> f64,
    layer_curve: impl Fn(u64) -> f64,
    sweep: &[u64],
) -> Result<Option<u64>> {
    if sweep.is_empty() {
        return Err(Error::invalid("crossover sweep is empty"));
    }
    if sweep.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("crossover sweep must be strictly increasing"));
    }
    Ok(sweep
        .iter()
        .copied()
        .find(|&n| token_curve(n) <= layer_curve(n)))
}
