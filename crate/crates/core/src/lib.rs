//! Multi-objective and multilevel optimization recipes over synthetic
//! problems with verifiable Pareto geometry.
//!
//! The crate provides:
//! - partitioned parameter vectors and per-objective gradient containers,
//! - simplex projection and dynamically weighted update directions,
//! - gradient-conflict measurement with layer-level pruning,
//! - flat, bilevel, and multilevel training recipes plus baselines,
//! - synthetic problem families with known geometry, and
//! - an experiment harness (`objsoup` binary) with JSONL traces and CSV
//!   reports.

pub mod config;
pub mod conflict;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod param_space;
pub mod problems;
pub mod recipes;
pub mod rng;
pub mod simplex;
pub mod trace;
pub mod weighting;

pub use error::{Error, Result};
