//! Reward channels for both agents.
//!
//! Proposer: format (optionally conditioned on solver tIoU by a threshold
//! delta), consistency (intra-moment coherence times inter-moment
//! discriminability), and feedback (mean solver tIoU). Solver: binary format
//! plus tIoU accuracy. Every channel maps into `[0, 1]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, Embedder};
use crate::metrics::tiou;
use crate::moment::Moment;
use crate::parsing::{is_valid_moment, ProposerOutput, SolverOutput};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("query in slot {slot} cannot be resolved by the embedder")]
    UnresolvableQuery { slot: usize },
}

/// One proposer rollout with the frozen solver's predictions, index-aligned
/// with the output slots (zero moments for padded slots).
#[derive(Debug, Clone)]
pub struct ProposerSample {
    pub output: ProposerOutput,
    pub predictions: Vec<Moment>,
    pub video_duration: f64,
}

impl ProposerSample {
    pub fn slots(&self) -> usize {
        debug_assert_eq!(self.output.pairs.len(), self.predictions.len());
        self.output.pairs.len()
    }

    /// A slot participates in consistency/feedback when it was actually
    /// parsed and its moment is a real interval.
    fn is_active(&self, i: usize) -> bool {
        !self.output.is_padded_slot(i) && self.output.pairs[i].moment.is_well_formed()
    }
}

/// Inter-consistency formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterVariant {
    Softmax,
    Hard,
    Exp,
}

/// Knobs for the consistency reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    /// Sensitivity of the intra score to similarity spread.
    pub gamma: f64,
    /// Softmax temperature of the inter score.
    pub tau: f64,
    /// Frames sampled per second of moment length.
    pub rho: f64,
    pub t_min: usize,
    pub t_max: usize,
    pub variant: InterVariant,
    /// Margin sensitivity of the exponential inter variant.
    pub gamma_inter: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            gamma: 30.0,
            tau: 1.0,
            rho: 1.0,
            t_min: 8,
            t_max: 32,
            variant: InterVariant::Softmax,
            gamma_inter: 30.0,
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(format!("gamma {} must be positive", self.gamma));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(format!("tau {} must be positive", self.tau));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(format!("rho {} must be positive", self.rho));
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return Err(format!("frame count range ({}, {}) is empty", self.t_min, self.t_max));
        }
        if !(self.gamma_inter.is_finite() && self.gamma_inter > 0.0) {
            return Err(format!("gamma_inter {} must be positive", self.gamma_inter));
        }
        Ok(())
    }
}

/// Format reward, optionally conditioned on solver accuracy.
///
/// Zero when the template is broken; otherwise the fraction of slots whose
/// moment is in the validity set and (for `delta > 0`) whose solver
/// prediction reaches `tiou >= delta`. With `delta == 0` the tIoU condition
/// is vacuous and the value equals the plain format reward exactly.
pub fn proposer_format_reward(sample: &ProposerSample, min_length: f64, delta: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&delta));
    if !sample.output.template_ok {
        return 0.0;
    }
    let n = sample.slots();
    if n == 0 {
        return 0.0;
    }
    let mut count = 0usize;
    for i in 0..n {
        let m = &sample.output.pairs[i].moment;
        if !is_valid_moment(m, sample.video_duration, min_length) {
            continue;
        }
        if delta > 0.0 {
            let t = tiou(m, &sample.predictions[i], sample.video_duration).unwrap_or(0.0);
            if t < delta {
                continue;
            }
        }
        count += 1;
    }
    count as f64 / n as f64
}

/// Number of frames representing a moment: its length times `rho`, rounded
/// to nearest, clipped to `[t_min, t_max]`.
pub fn frame_count(m: &Moment, cfg: &ConsistencyConfig) -> usize {
    debug_assert!(m.is_well_formed());
    let raw = (m.length() * cfg.rho).round();
    let raw = if raw.is_finite() && raw > 0.0 { raw as usize } else { 0 };
    raw.clamp(cfg.t_min, cfg.t_max)
}

/// Midpoints of `count` equal-width subintervals of the moment: a
/// deterministic uniform sampling that stays strictly inside `(start, end)`.
pub fn frame_times(m: &Moment, count: usize) -> Vec<f64> {
    debug_assert!(count >= 1);
    let width = m.length() / count as f64;
    (0..count).map(|i| m.start + (i as f64 + 0.5) * width).collect()
}

/// `exp(-gamma * sigma)` where sigma is the population standard deviation of
/// the frame similarities.
pub fn intra_consistency(similarities: &[f64], gamma: f64) -> f64 {
    assert!(!similarities.is_empty(), "intra-consistency needs at least one similarity");
    let n = similarities.len() as f64;
    let mean = similarities.iter().sum::<f64>() / n;
    let var = similarities.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    (-gamma * var.sqrt()).exp()
}

/// Discriminability of a query for its own moment against the other
/// candidates in `mu_row` (mean cross-moment similarities, own value at
/// `self_index`).
pub fn inter_consistency(mu_row: &[f64], self_index: usize, cfg: &ConsistencyConfig) -> f64 {
    assert!(!mu_row.is_empty() && self_index < mu_row.len());
    let n = mu_row.len();
    let own = mu_row[self_index];
    match cfg.variant {
        InterVariant::Softmax => {
            let max = mu_row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exps: Vec<f64> = mu_row.iter().map(|&m| ((m - max) / cfg.tau).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps[self_index] / total
        }
        InterVariant::Hard => {
            let wins = mu_row.iter().filter(|&&m| own >= m).count();
            wins as f64 / n as f64
        }
        InterVariant::Exp => {
            if n <= 1 {
                return 0.0;
            }
            let margin_sum: f64 = mu_row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != self_index)
                .map(|(_, &m)| (own - m).max(0.0))
                .sum();
            1.0 - (-cfg.gamma_inter * margin_sum / (n - 1) as f64).exp()
        }
    }
}

/// Mean over slots of `intra * inter`, with padded or degenerate slots
/// contributing zero (denominator stays at the slot count).
///
/// The full mu matrix is built over the active slots: `mu[a][b]` is the mean
/// similarity of query `a` against frames sampled from moment `b` (frame
/// count from moment `b`'s length).
pub fn consistency_reward(
    sample: &ProposerSample,
    embedder: &dyn Embedder,
    cfg: &ConsistencyConfig,
) -> Result<f64, RewardError> {
    let n = sample.slots();
    if n == 0 {
        return Ok(0.0);
    }
    let active: Vec<usize> = (0..n).filter(|&i| sample.is_active(i)).collect();
    if active.is_empty() {
        return Ok(0.0);
    }
    let mut latents = Vec::with_capacity(active.len());
    for &i in &active {
        let q = embedder
            .resolve_query(&sample.output.pairs[i].query)
            .ok_or(RewardError::UnresolvableQuery { slot: i })?;
        latents.push(q);
    }
    let times: Vec<Vec<f64>> = active
        .iter()
        .map(|&j| {
            let m = &sample.output.pairs[j].moment;
            frame_times(m, frame_count(m, cfg))
        })
        .collect();
    let k = active.len();
    let mut total = 0.0;
    for a in 0..k {
        let mut mu_row = Vec::with_capacity(k);
        let mut own_sims = Vec::new();
        for b in 0..k {
            let mut sims = Vec::with_capacity(times[b].len());
            for &t in &times[b] {
                sims.push(embedder.similarity(&latents[a], t)?);
            }
            mu_row.push(sims.iter().sum::<f64>() / sims.len() as f64);
            if a == b {
                own_sims = sims;
            }
        }
        let intra = intra_consistency(&own_sims, cfg.gamma);
        let inter = inter_consistency(&mu_row, a, cfg);
        total += intra * inter;
    }
    Ok(total / n as f64)
}

/// Mean solver tIoU over the slots; padded or degenerate slots contribute
/// zero.
pub fn feedback_reward(sample: &ProposerSample) -> f64 {
    let n = sample.slots();
    if n == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        if !sample.is_active(i) {
            continue;
        }
        let m = &sample.output.pairs[i].moment;
        sum += tiou(m, &sample.predictions[i], sample.video_duration).unwrap_or(0.0);
    }
    sum / n as f64
}

/// Binary reward for following the solver template.
pub fn solver_format_reward(out: &SolverOutput) -> f64 {
    if out.template_ok {
        1.0
    } else {
        0.0
    }
}

/// Solver accuracy: tIoU between the ground truth and the parsed answer,
/// zero when the answer is absent or degenerate.
pub fn solver_acc_reward(gt: &Moment, out: &SolverOutput, duration: f64) -> f64 {
    let Some(answer) = out.answer_moment else { return 0.0 };
    if !gt.is_well_formed() || !(duration.is_finite() && duration > 0.0) {
        return 0.0;
    }
    tiou(gt, &answer, duration).unwrap_or(0.0)
}
