//! Tap-driven online learning of speech-agent response timing.
//!
//! User taps activate or interrupt the agent; each tap becomes a labeled
//! sample for a dilated-TCN model trained with recency-weighted replay.

pub mod agent;
pub mod audio;
pub mod eval;
pub mod error;
pub mod learner;
pub mod miner;
pub mod model;
pub mod runner;
pub mod simulator;

pub use error::{Error, Result};
