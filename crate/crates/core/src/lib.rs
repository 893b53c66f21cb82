//! Outlier detection for battery cycling data.
//!
//! The crate covers ingestion of per-sample cycling exports, per-cycle
//! feature extraction, statistical, distance-based and machine-learning
//! detectors, multi-objective hyperparameter tuning and benchmark
//! evaluation. Parallel work goes through [`exec::Exec`]; building without
//! the default `parallel` feature makes every path sequential.

pub mod cli;
pub mod dataset;
pub mod dist_detect;
pub mod error;
pub mod eval;
pub mod exec;
pub mod features;
pub mod linalg;
pub mod ml;
pub mod pipeline;
pub mod stat_detect;
pub mod stats;
pub mod synth;
pub mod tune;

pub use error::{Error, Result};
