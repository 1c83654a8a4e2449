//! Experiment harness for `glow-core`: file formats, config-driven sweeps,
//! regret-slope fits and plot data.
//!
//! A sweep is a list of settings (iteration counts with their derived
//! parameters) crossed with a list of seeds. Each `(setting, seed)` cell owns
//! its random stream, writes its own files atomically, and is listed in the
//! manifest with a content hash.

pub mod config;
pub mod error;
pub mod formats;
pub mod plot;
pub mod runner;
pub mod stats;

pub use config::{resolve, Algorithm, ExperimentConfig, Plan};
pub use error::{BenchError, Result};
pub use runner::{run_experiment, Manifest, RunOptions};
