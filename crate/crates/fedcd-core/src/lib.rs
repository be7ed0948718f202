//! Deterministic simulator of federated learning with multiple global
//! models that are cloned at milestone rounds, score-weighted per device,
//! and deleted once they underperform — benchmarked against single-model
//! federated averaging on configurable non-IID device populations.
//!
//! The crate is organised around the lifecycle of an experiment:
//!
//! - [`model`] — a small feed-forward classifier trained by mini-batch
//!   SGD, plus symmetric uniform weight quantization.
//! - [`data`] — synthetic class-blob generation and non-IID device
//!   shards carved from hierarchical or hypergeometric label archetypes.
//! - [`engine`] — the round state machine: device selection, local
//!   training, score-weighted aggregation, pruning, garbage collection,
//!   and milestone cloning.
//! - [`metrics`] — per-round metrics, oscillation / score-spread
//!   statistics, and the CSV / summary writers.
//! - [`rng`] — seed-derived deterministic random streams keyed by
//!   purpose strings, so runs reproduce bit-for-bit regardless of
//!   device-execution order.
//!
//! All arithmetic is `f64` and every source of randomness is an explicit
//! stream derived from the experiment seed; two runs with the same
//! configuration produce identical outputs.

pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
