//! Information-driven affordance discovery as a contextual bandit.
//!
//! An ensemble of per-pixel Bernoulli predictors is trained online from
//! single-step interactions; disagreement between heads, measured as the
//! Jensen-Shannon information radius, drives exploration.

pub mod buffer;
pub mod envs;
pub mod error;
pub mod infogain;
pub mod policy;
pub mod predictor;
pub mod rng;
pub mod trainer;
pub mod types;

pub use buffer::ReplayBuffer;
pub use error::{Error, Result};
pub use predictor::{Arch, ConvWidths, Ensemble, ModelConfig};
pub use types::{ActionSpec, GridShape, InfoMap, MapShape, Mask, Outcome, ProbMap, Scene, ScoreMap, Transition};
