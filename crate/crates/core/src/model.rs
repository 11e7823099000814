//! Model geometry, requests, prefix chunking and pipeline stage partitions.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default chunk size in tokens, aligned with common attention kernel block sizes.
pub const DEFAULT_CHUNK_SIZE: u64 = 512;

/// Transformer geometry relevant to KV-cache size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_layers: usize,
    pub num_kv_heads: usize,
    pub head_dim: usize,
    pub hidden_size: usize,
    pub dtype_bytes: usize,
}

impl ModelSpec {
    pub fn new(
        num_layers: usize,
        num_kv_heads: usize,
        head_dim: usize,
        hidden_size: usize,
        dtype_bytes: usize,
    ) -> Result<Self> {
        let spec = Self {
            num_layers,
            num_kv_heads,
            head_dim,
            hidden_size,
            dtype_bytes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Qwen3-8B-like geometry: 36 layers, 8 KV heads of dim 128, bf16.
    pub fn qwen3_8b() -> Self {
        Self {
            num_layers: 36,
            num_kv_heads: 8,
            head_dim: 128,
            hidden_size: 4096,
            dtype_bytes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_layers", self.num_layers),
            ("num_kv_heads", self.num_kv_heads),
            ("head_dim", self.head_dim),
            ("hidden_size", self.hidden_size),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::InvalidModel(format!("{name} must be at least 1")));
            }
        }
        if !matches!(self.dtype_bytes, 1 | 2 | 4) {
            return Err(Error::InvalidModel(format!(
                "dtype_bytes must be 1, 2 or 4 (got {})",
                self.dtype_bytes
            )));
        }
        Ok(())
    }

    /// KV bytes one token occupies in a single layer: keys and values.
    pub fn kv_bytes_per_token_layer(&self) -> u64 {
        2 * (self.num_kv_heads * self.head_dim * self.dtype_bytes) as u64
    }

    /// KV bytes per token across all layers, `2·L·H·d·dtype_bytes`.
    pub fn kv_bytes_per_token(&self) -> u64 {
        self.kv_bytes_per_token_layer() * self.num_layers as u64
    }

    /// KV bytes per token held by `layers` consecutive layers.
    pub fn kv_bytes_per_token_for_layers(&self, layers: usize) -> u64 {
        self.kv_bytes_per_token_layer() * layers as u64
    }

    /// Total KV footprint of `tokens` tokens.
    pub fn kv_bytes(&self, tokens: u64) -> u64 {
        self.kv_bytes_per_token() * tokens
    }

    /// Bytes of one token's hidden-state activation at a stage boundary.
    pub fn boundary_bytes_per_token(&self) -> u64 {
        (self.hidden_size * self.dtype_bytes) as u64
    }
}

/// A request whose prefix KV has to be restored before prefill of its new tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub arrival_time: f64,
    /// Tokens whose KV exists in external storage.
    pub cached_prefix_tokens: u64,
    /// Suffix tokens with no cached KV; always at least one.
    pub new_tokens: u64,
}

impl Request {
    pub fn new(id: u64, arrival_time: f64, cached_prefix_tokens: u64, new_tokens: u64) -> Result<Self> {
        let req = Self {
            id,
            arrival_time,
            cached_prefix_tokens,
            new_tokens,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        if self.new_tokens == 0 {
            return Err(Error::invalid(format!("request {}: new_tokens must be >= 1", self.id)));
        }
        if !(self.arrival_time >= 0.0) || !self.arrival_time.is_finite() {
            return Err(Error::invalid(format!(
                "request {}: arrival_time must be finite and >= 0",
                self.id
            )));
        }
        Ok(())
    }
}

/// Partition of a prefix into fixed-size chunks; only the last chunk may be short.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunking {
    pub prefix_tokens: u64,
    pub chunk_size: u64,
    pub num_chunks: usize,
    pub last_chunk_tokens: u64,
}

impl Chunking {
    pub fn new(prefix_tokens: u64, chunk_size: u64) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::invalid("chunk_size must be >= 1"));
        }
        let num_chunks = prefix_tokens.div_ceil(chunk_size) as usize;
        let last_chunk_tokens = if num_chunks == 0 {
            0
        } else {
            prefix_tokens - (num_chunks as u64 - 1) * chunk_size
        };
        Ok(Self {
            prefix_tokens,
            chunk_size,
            num_chunks,
            last_chunk_tokens,
        })
    }

    pub fn chunk_tokens(&self, index: usize) -> Result<u64> {
        if index >= self.num_chunks {
            return Err(Error::OutOfRange {
                index,
                len: self.num_chunks,
            });
        }
        Ok(if index + 1 == self.num_chunks {
            self.last_chunk_tokens
        } else {
            self.chunk_size
        })
    }

    /// Tokens covered by chunks `0..end`.
    pub fn tokens_before(&self, end: usize) -> u64 {
        let end = end.min(self.num_chunks);
        if end == self.num_chunks {
            self.prefix_tokens
        } else {
            end as u64 * self.chunk_size
        }
    }
}

/// Convenience wrapper matching the operation name used throughout the docs.
pub fn make_chunking(prefix_tokens: u64, chunk_size: u64) -> Result<Chunking> {
    Chunking::new(prefix_tokens, chunk_size)
}

/// Contiguous layer ranges owned by each pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePartition {
    ranges: Vec<Range<usize>>,
}

impl StagePartition {
    /// Checks that `ranges` are ordered, disjoint and cover `[0, num_layers)`.
    pub fn from_ranges(num_layers: usize, ranges: Vec<Range<usize>>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::invalid("partition must have at least one stage"));
        }
        let mut next = 0;
        for r in &ranges {
            if r.start != next || r.end <= r.start {
                return Err(Error::invalid(format!(
                    "stage range {r:?} breaks contiguous coverage at layer {next}"
                )));
            }
            next = r.end;
        }
        if next != num_layers {
            return Err(Error::invalid(format!(
                "partition covers {next} layers, model has {num_layers}"
            )));
        }
        Ok(Self { ranges })
    }

    /// Balanced split; the first `L mod S` stages get one extra layer.
    pub fn uniform(num_layers: usize, num_stages: usize) -> Result<Self> {
        if num_stages == 0 || num_stages > num_layers {
            return Err(Error::invalid(format!(
                "need 1 <= num_stages <= num_layers (got {num_stages} stages, {num_layers} layers)"
            )));
        }
        let base = num_layers / num_stages;
        let extra = num_layers % num_stages;
        let mut start = 0;
        let ranges = (0..num_stages)
            .map(|s| {
                let len = base + usize::from(s < extra);
                let r = start..start + len;
                start += len;
                r
            })
            .collect();
        Ok(Self { ranges })
    }

    pub fn num_stages(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn num_layers(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }
}

pub fn uniform_stage_partition(num_layers: usize, num_stages: usize) -> Result<StagePartition> {
    StagePartition::uniform(num_layers, num_stages)
}
