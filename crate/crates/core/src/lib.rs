//! Restoration planning and simulation for prefix KV caches.
//!
//! A cached prefix can be restored by recomputing it on the GPU or by loading
//! its KV tensors from slower storage. This crate plans how to split that work
//! between the two resources for one request, across pipeline stages, and
//! across a batch of requests competing for the same channels, and simulates
//! the result to report time-to-first-token and utilization.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod error;
pub mod model;
pub mod multi_gpu;
pub mod planner;
pub mod scheduler;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
