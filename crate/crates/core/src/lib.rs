//! Spatio-temporal multi-hop graph learning for fraud screening.
//!
//! The crate covers the whole pipeline: transaction ingestion and windowing
//! ([`ingest`]), per-window entity graphs ([`graph`]), a small reverse-mode
//! differentiation core ([`numcore`]), the multi-hop encoder with single-step
//! temporal attention ([`model`]), contrastive and class-weighted objectives
//! ([`objectives`]), the two-stage training protocol ([`trainer`]), screening
//! metrics ([`eval`]), tabular reference models ([`baselines`]), the end-to-end
//! dataset builder ([`pipeline`]) and a
//! deterministic synthetic transaction generator ([`synthgen`]).

pub mod baselines;
pub mod error;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod numcore;
pub mod objectives;
pub mod pipeline;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
