//! Temporal grounding evaluation: IoU, timestamp-aware IoU, recall at IoU
//! thresholds, mean IoU, per-interval F1, and nonparametric bootstrap
//! confidence intervals.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moment::Moment;
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ground-truth interval ({0}, {1}) is not well-formed")]
    MalformedGroundTruth(f64, f64),
    #[error("video duration must be positive and finite, got {0}")]
    BadDuration(f64),
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("bootstrap needs at least one resample")]
    ZeroResamples,
    #[error("non-finite value in input")]
    NonFinite,
}

/// One evaluation pairing. The ground truth must be well-formed and inside
/// the video; the prediction may be degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub gt: Moment,
    pub pred: Moment,
    pub video_duration: f64,
}

/// Intersection over union of two intervals.
///
/// Zero for degenerate (`end <= start`) or disjoint predictions; an error
/// only for a malformed ground truth.
pub fn iou(m: &Moment, p: &Moment) -> Result<f64, MetricsError> {
    if !m.is_well_formed() {
        return Err(MetricsError::MalformedGroundTruth(m.start, m.end));
    }
    if !(p.start.is_finite() && p.end.is_finite()) || p.end <= p.start {
        return Ok(0.0);
    }
    let inter = m.intersection(p);
    if inter <= 0.0 {
        return Ok(0.0);
    }
    let union = m.length() + p.length() - inter;
    Ok(inter / union)
}

/// Timestamp-aware IoU: IoU discounted by the start and end deviations
/// relative to the video duration, clamped at zero when a penalty factor
/// goes negative (possible only when the prediction exits `[0, duration]`).
pub fn tiou(m: &Moment, p: &Moment, duration: f64) -> Result<f64, MetricsError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(MetricsError::BadDuration(duration));
    }
    let base = iou(m, p)?;
    if base == 0.0 {
        return Ok(0.0);
    }
    let f_start = 1.0 - (m.start - p.start).abs() / duration;
    let f_end = 1.0 - (m.end - p.end).abs() / duration;
    if f_start < 0.0 || f_end < 0.0 {
        return Ok(0.0);
    }
    Ok(base * f_start * f_end)
}

fn per_sample_ious(samples: &[EvalSample]) -> Result<Vec<f64>, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySampleSet);
    }
    samples.iter().map(|s| iou(&s.gt, &s.pred)).collect()
}

/// Top-1 recall: percentage of samples with `iou >= threshold`.
pub fn recall_at(samples: &[EvalSample], threshold: f64) -> Result<f64, MetricsError> {
    if !(threshold.is_finite() && threshold > 0.0 && threshold < 1.0) {
        return Err(MetricsError::InvalidThreshold(threshold));
    }
    let ious = per_sample_ious(samples)?;
    let hits = ious.iter().filter(|&&x| x >= threshold).count();
    Ok(100.0 * hits as f64 / ious.len() as f64)
}

/// Mean per-sample IoU as a percentage.
pub fn mean_iou(samples: &[EvalSample]) -> Result<f64, MetricsError> {
    let ious = per_sample_ious(samples)?;
    Ok(100.0 * ious.iter().sum::<f64>() / ious.len() as f64)
}

fn dice(s: &EvalSample) -> Result<f64, MetricsError> {
    if !s.gt.is_well_formed() {
        return Err(MetricsError::MalformedGroundTruth(s.gt.start, s.gt.end));
    }
    let inter = s.gt.intersection(&s.pred);
    let p_len = if s.pred.end.is_finite() && s.pred.start.is_finite() { s.pred.length() } else { 0.0 };
    let denom = s.gt.length() + p_len;
    if denom <= 0.0 || inter <= 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * inter / denom)
}

/// Mean per-interval overlap F1 (Dice of overlap: precision is
/// `overlap/|pred|`, recall is `overlap/|gt|`), as a percentage.
pub fn interval_f1(samples: &[EvalSample]) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySampleSet);
    }
    let mut sum = 0.0;
    for s in samples {
        sum += dice(s)?;
    }
    Ok(100.0 * sum / samples.len() as f64)
}

/// Linear interpolation between order statistics, `p` in percent.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 95% percentile-bootstrap confidence interval for the mean.
///
/// Draws `resamples` same-size resamples with replacement from a ChaCha
/// stream seeded with `seed` and returns the empirical 2.5th/97.5th
/// percentiles of the resampled means.
pub fn bootstrap_ci(values: &[f64], resamples: usize, seed: u64) -> Result<(f64, f64), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySampleSet);
    }
    if resamples == 0 {
        return Err(MetricsError::ZeroResamples);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += values[rng.gen_range(0..n)];
        }
        means.push(sum / n as f64);
    }
    means.sort_by(|a, b| a.total_cmp(b));
    Ok((percentile(&means, 2.5), percentile(&means, 97.5)))
}

/// Point estimates with bootstrap confidence intervals for one evaluation
/// run. All values are percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `(threshold, recall)` rows in ascending threshold order.
    pub r1: Vec<(f64, f64)>,
    pub miou: f64,
    pub f1: f64,
    /// `(metric name, (low, high))` in the same order as [`Self::rows`].
    pub ci: Vec<(String, (f64, f64))>,
}

impl EvalReport {
    /// Evaluate `samples` at the given recall thresholds with
    /// percentile-bootstrap CIs (`resamples` draws per metric).
    pub fn compute(
        samples: &[EvalSample],
        thresholds: &[f64],
        resamples: usize,
        seed: u64,
    ) -> Result<EvalReport, MetricsError> {
        let ious = per_sample_ious(samples)?;
        let mut r1 = Vec::with_capacity(thresholds.len());
        let mut ci = Vec::new();
        let mut row = 0u64;
        for &th in thresholds {
            let point = recall_at(samples, th)?;
            let per: Vec<f64> = ious.iter().map(|&x| if x >= th { 100.0 } else { 0.0 }).collect();
            let interval = bootstrap_ci(&per, resamples, derive_seed(seed, "ci", &[row]))?;
            r1.push((th, point));
            ci.push((format!("R1@{th}"), interval));
            row += 1;
        }
        let miou = mean_iou(samples)?;
        let per_miou: Vec<f64> = ious.iter().map(|&x| 100.0 * x).collect();
        ci.push(("mIoU".into(), bootstrap_ci(&per_miou, resamples, derive_seed(seed, "ci", &[row]))?));
        row += 1;
        let f1 = interval_f1(samples)?;
        let per_f1: Vec<f64> = samples.iter().map(|s| dice(s).map(|d| 100.0 * d)).collect::<Result<_, _>>()?;
        ci.push(("F1".into(), bootstrap_ci(&per_f1, resamples, derive_seed(seed, "ci", &[row]))?));
        Ok(EvalReport { r1, miou, f1, ci })
    }

    /// `(name, estimate, ci_low, ci_high)` rows in report order.
    pub fn rows(&self) -> Vec<(String, f64, f64, f64)> {
        let mut out = Vec::new();
        for (i, (th, val)) in self.r1.iter().enumerate() {
            let (lo, hi) = self.ci[i].1;
            out.push((format!("R1@{th}"), *val, lo, hi));
        }
        let k = self.r1.len();
        let (lo, hi) = self.ci[k].1;
        out.push(("mIoU".into(), self.miou, lo, hi));
        let (lo, hi) = self.ci[k + 1].1;
        out.push(("F1".into(), self.f1, lo, hi));
        out
    }

    /// Look up a row by metric name.
    pub fn get(&self, name: &str) -> Option<(f64, f64, f64)> {
        self.rows().into_iter().find(|(n, ..)| n == name).map(|(_, e, lo, hi)| (e, lo, hi))
    }

    /// Flat key-value CSV with columns `metric,estimate,ci_low,ci_high`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,estimate,ci_low,ci_high\n");
        for (name, est, lo, hi) in self.rows() {
            out.push_str(&format!("{name},{est},{lo},{hi}\n"));
        }
        out
    }
}
