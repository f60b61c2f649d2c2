//! A desk-scale simulator of a self-evolving proposer-solver loop for video
//! temporal grounding.
//!
//! Parametric stochastic policies stand in for video LLMs on procedurally
//! generated latent worlds. The crate provides the complete reward system
//! (format, consistency, feedback; solver format and accuracy), group-relative
//! advantage computation with per-channel decoupled normalization, a
//! threshold curriculum over alternating proposer/solver stages, tagged-output
//! parsing, and the temporal-grounding evaluation stack with bootstrap
//! confidence intervals.

pub mod config;
pub mod embed;
pub mod evolution;
pub mod metrics;
pub mod moment;
pub mod optimizer;
pub mod parsing;
pub mod policies;
pub mod rewards;
pub mod rng;
pub mod synthworld;

pub use moment::Moment;
