//! Group-relative advantage computation (summed-reward and per-channel
//! decoupled variants) and score-function policy updates.
//!
//! The summed variant normalizes the channel sum within each rollout group.
//! The decoupled variant normalizes each reward channel individually within
//! the group, combines the channel advantages with weights, then applies a
//! final batch-wise normalization across all groups of the step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to the normalization denominator.
pub const ADVANTAGE_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite value in rewards")]
    NonFinite,
    #[error("empty group")]
    EmptyGroup,
    #[error("ragged reward matrix: row {row} has {got} channels, expected {expected}")]
    RaggedMatrix { row: usize, got: usize, expected: usize },
    #[error("dimension mismatch: {context} ({got} vs {expected})")]
    DimensionMismatch { context: &'static str, got: usize, expected: usize },
    #[error("channel weights must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("empty batch")]
    EmptyBatch,
}

/// Per-group rewards: one row per rollout, one column per reward channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMatrix {
    pub group_id: usize,
    rollouts: usize,
    channels: usize,
    data: Vec<f64>, // row-major
}

impl RewardMatrix {
    pub fn new(group_id: usize, rows: Vec<Vec<f64>>) -> Result<Self, OptimError> {
        if rows.is_empty() {
            return Err(OptimError::EmptyGroup);
        }
        let channels = rows[0].len();
        if channels == 0 {
            return Err(OptimError::RaggedMatrix { row: 0, got: 0, expected: 1 });
        }
        let mut data = Vec::with_capacity(rows.len() * channels);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != channels {
                return Err(OptimError::RaggedMatrix { row: i, got: row.len(), expected: channels });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::NonFinite);
            }
            data.extend_from_slice(row);
        }
        Ok(RewardMatrix { group_id, rollouts: rows.len(), channels, data })
    }

    pub fn rollouts(&self) -> usize {
        self.rollouts
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, rollout: usize, channel: usize) -> f64 {
        self.data[rollout * self.channels + channel]
    }

    pub fn channel_column(&self, channel: usize) -> Vec<f64> {
        (0..self.rollouts).map(|g| self.get(g, channel)).collect()
    }

    /// Unweighted channel sums per rollout.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rollouts)
            .map(|g| (0..self.channels).map(|k| self.get(g, k)).sum())
            .collect()
    }
}

/// Positive per-channel aggregation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelWeights(Vec<f64>);

impl ChannelWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, OptimError> {
        if weights.is_empty() {
            return Err(OptimError::EmptyGroup);
        }
        for &w in &weights {
            if !(w.is_finite() && w > 0.0) {
                return Err(OptimError::NonPositiveWeight(w));
            }
        }
        Ok(ChannelWeights(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `(v - mean) / max(population std, eps)`. All-equal inputs map to zeros.
fn normalize(values: &[f64], eps: f64) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = var.sqrt().max(eps);
    values.iter().map(|v| (v - mean) / denom).collect()
}

/// Group-normalized advantages of summed rewards.
pub fn grpo_advantages(reward_sums: &[f64]) -> Result<Vec<f64>, OptimError> {
    grpo_advantages_eps(reward_sums, ADVANTAGE_EPSILON)
}

/// [`grpo_advantages`] with an explicit denominator floor.
pub fn grpo_advantages_eps(reward_sums: &[f64], eps: f64) -> Result<Vec<f64>, OptimError> {
    if reward_sums.is_empty() {
        return Err(OptimError::EmptyGroup);
    }
    if reward_sums.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::NonFinite);
    }
    Ok(normalize(reward_sums, eps))
}

/// Per-channel group normalization: each column of the matrix is normalized
/// independently. Returns one row per rollout.
pub fn gdpo_channel_advantages(m: &RewardMatrix) -> Result<Vec<Vec<f64>>, OptimError> {
    gdpo_channel_advantages_eps(m, ADVANTAGE_EPSILON)
}

/// [`gdpo_channel_advantages`] with an explicit denominator floor.
pub fn gdpo_channel_advantages_eps(m: &RewardMatrix, eps: f64) -> Result<Vec<Vec<f64>>, OptimError> {
    let mut out = vec![vec![0.0; m.channels()]; m.rollouts()];
    for k in 0..m.channels() {
        let col = normalize(&m.channel_column(k), eps);
        for (g, v) in col.into_iter().enumerate() {
            out[g][k] = v;
        }
    }
    Ok(out)
}

/// Weighted sum of per-channel advantages per rollout.
pub fn gdpo_combine(per_channel: &[Vec<f64>], weights: &ChannelWeights) -> Result<Vec<f64>, OptimError> {
    if per_channel.is_empty() {
        return Err(OptimError::EmptyGroup);
    }
    let k = weights.len();
    let mut out = Vec::with_capacity(per_channel.len());
    for row in per_channel {
        if row.len() != k {
            return Err(OptimError::DimensionMismatch { context: "channel weights", got: row.len(), expected: k });
        }
        out.push(row.iter().zip(weights.as_slice()).map(|(a, w)| w * a).sum());
    }
    Ok(out)
}

/// Batch-wise normalization of combined advantages: flatten every group,
/// normalize with the shared mean/std, restore the group shapes.
pub fn gdpo_batch_normalize(combined_per_group: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, OptimError> {
    gdpo_batch_normalize_eps(combined_per_group, ADVANTAGE_EPSILON)
}

/// [`gdpo_batch_normalize`] with an explicit denominator floor.
pub fn gdpo_batch_normalize_eps(combined_per_group: &[Vec<f64>], eps: f64) -> Result<Vec<Vec<f64>>, OptimError> {
    if combined_per_group.is_empty() {
        return Err(OptimError::EmptyBatch);
    }
    let flat: Vec<f64> = combined_per_group.iter().flatten().copied().collect();
    if flat.is_empty() {
        return Err(OptimError::EmptyGroup);
    }
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::NonFinite);
    }
    let normed = normalize(&flat, eps);
    let mut out = Vec::with_capacity(combined_per_group.len());
    let mut cursor = 0;
    for group in combined_per_group {
        out.push(normed[cursor..cursor + group.len()].to_vec());
        cursor += group.len();
    }
    Ok(out)
}

/// Advantages of one rollout group through the decoupled pipeline: the
/// per-channel normalized grid, the weighted combination, and the result of
/// the final batch-wise normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    /// One row per rollout, one column per channel.
    pub per_channel: Vec<Vec<f64>>,
    pub combined: Vec<f64>,
    pub batch_normalized: Vec<f64>,
}

/// Run the full decoupled pipeline over a batch of groups: normalize each
/// reward channel within its group, combine with the weights, then
/// batch-normalize across every rollout of every group.
pub fn gdpo_advantage_sets(
    groups: &[RewardMatrix],
    weights: &ChannelWeights,
    eps: f64,
) -> Result<Vec<AdvantageSet>, OptimError> {
    if groups.is_empty() {
        return Err(OptimError::EmptyBatch);
    }
    let per_channel: Vec<Vec<Vec<f64>>> = groups
        .iter()
        .map(|m| gdpo_channel_advantages_eps(m, eps))
        .collect::<Result<_, _>>()?;
    let combined: Vec<Vec<f64>> = per_channel
        .iter()
        .map(|p| gdpo_combine(p, weights))
        .collect::<Result<_, _>>()?;
    let finals = gdpo_batch_normalize_eps(&combined, eps)?;
    Ok(per_channel
        .into_iter()
        .zip(combined)
        .zip(finals)
        .map(|((per_channel, combined), batch_normalized)| AdvantageSet {
            per_channel,
            combined,
            batch_normalized,
        })
        .collect())
}

/// One ascent step: `params + lr * mean over rollouts of (advantage * score
/// gradient)`. Empty rollout lists leave the parameters unchanged.
pub fn policy_update(
    params: &[f64],
    rollouts: &[(Vec<f64>, f64)],
    lr: f64,
) -> Result<Vec<f64>, OptimError> {
    if rollouts.is_empty() {
        return Ok(params.to_vec());
    }
    let grad = mean_weighted_gradient(params.len(), rollouts.iter().map(|(g, a)| (g.as_slice(), *a)))?;
    Ok(apply_gradient(params, &grad, lr))
}

/// Mean of `advantage * score_gradient` over rollouts.
pub fn mean_weighted_gradient<'a>(
    dim: usize,
    rollouts: impl Iterator<Item = (&'a [f64], f64)>,
) -> Result<Vec<f64>, OptimError> {
    let mut sum = vec![0.0; dim];
    let mut count = 0usize;
    for (grad, adv) in rollouts {
        if grad.len() != dim {
            return Err(OptimError::DimensionMismatch { context: "score gradient", got: grad.len(), expected: dim });
        }
        if !adv.is_finite() {
            return Err(OptimError::NonFinite);
        }
        for (s, g) in sum.iter_mut().zip(grad) {
            *s += adv * g;
        }
        count += 1;
    }
    if count == 0 {
        return Ok(sum);
    }
    for s in &mut sum {
        *s /= count as f64;
    }
    Ok(sum)
}

pub fn apply_gradient(params: &[f64], gradient: &[f64], lr: f64) -> Vec<f64> {
    params.iter().zip(gradient).map(|(p, g)| p + lr * g).collect()
}

/// Averages per-step gradient estimates and releases the mean every `every`
/// steps (gradient accumulation).
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    sum: Vec<f64>,
    pending: usize,
    every: usize,
}

impl GradAccumulator {
    pub fn new(dim: usize, every: usize) -> Self {
        GradAccumulator { sum: vec![0.0; dim], pending: 0, every: every.max(1) }
    }

    /// Absorb one step estimate; returns the averaged gradient when the
    /// accumulation window fills.
    pub fn push(&mut self, step_gradient: &[f64]) -> Option<Vec<f64>> {
        debug_assert_eq!(step_gradient.len(), self.sum.len());
        for (s, g) in self.sum.iter_mut().zip(step_gradient) {
            *s += g;
        }
        self.pending += 1;
        if self.pending == self.every {
            return self.flush();
        }
        None
    }

    /// Release whatever is pending (averaged), if anything.
    pub fn flush(&mut self) -> Option<Vec<f64>> {
        if self.pending == 0 {
            return None;
        }
        let avg: Vec<f64> = self.sum.iter().map(|s| s / self.pending as f64).collect();
        self.sum.iter_mut().for_each(|s| *s = 0.0);
        self.pending = 0;
        Some(avg)
    }
}

/// Which advantage scheme drives the proposer update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Grpo,
    Gdpo,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Grpo => write!(f, "grpo"),
            Algorithm::Gdpo => write!(f, "gdpo"),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grpo" => Ok(Algorithm::Grpo),
            "gdpo" => Ok(Algorithm::Gdpo),
            other => Err(format!("unknown algorithm {other:?}, expected grpo or gdpo")),
        }
    }
}
