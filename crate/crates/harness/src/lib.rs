//! Experiment harness for affordance bandit runs: bootstrap statistics,
//! JSONL/CSV/PGM outputs, flat config files, sweeps and self-checks.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod stats;
pub mod verify;

pub use config::Settings;
pub use error::{Error, Result};
