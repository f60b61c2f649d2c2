//! Command-line harness: corpus generation, training runs, evaluation,
//! reward-channel ablation sweeps, and report emission.

pub mod ablation;
pub mod commands;
mod error;

pub use error::HarnessError;
