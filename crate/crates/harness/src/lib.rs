//! Experiment harness for the retsync simulator: configuration, the
//! generate/train/evaluate pipeline, procedure batches and report merging.

pub mod config;
pub mod error;
pub mod grid;
pub mod pipeline;
pub mod provenance;
pub mod report;
pub mod runs;
pub mod store;

pub use config::{Condition, ExperimentConfig};
pub use error::{HarnessError, Result};
