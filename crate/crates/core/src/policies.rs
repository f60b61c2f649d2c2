//! Parametric stochastic stand-ins for the proposer and solver agents.
//!
//! Both policies act on the latent event structure of a synthetic video but
//! speak the same tagged-text protocol a language model would: the proposer
//! emits query-moment pairs, the solver emits a think/answer block. Every
//! sampled action carries its exact log-density and an analytic
//! score-function gradient, so the policy-gradient updates are verifiable
//! against finite differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embed::{l2_norm, render_latent};
use crate::moment::Moment;
use crate::parsing::{render_proposer, render_solver, QueryMoment};
use crate::synthworld::SyntheticVideo;

/// Fixed content of the solver's think block; only structure is rewarded.
pub const SOLVER_THINK_TEXT: &str = "scored candidate windows against the query and picked the best match";

/// Sigmoid output clamp keeping the query-noise density proper.
const FIDELITY_CLAMP: f64 = 1e-9;

/// Proposer policy parameters.
///
/// `anchor_logits[i]` scores selecting the video's `i`-th event as an anchor
/// (events beyond a video's count are ignored). Boundaries are jittered with
/// a truncated Gaussian of std `exp(boundary_log_std)`, and the emitted query
/// is the anchor latent observed under Gaussian noise whose scale shrinks as
/// the fidelity logit grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerParams {
    pub anchor_logits: Vec<f64>,
    pub boundary_log_std: f64,
    pub query_fidelity_logit: f64,
}

impl ProposerParams {
    /// Untrained starting point: uniform anchors, 5 s boundary std,
    /// mid-range fidelity.
    pub fn initial(max_events: usize) -> Self {
        ProposerParams {
            anchor_logits: vec![0.0; max_events],
            boundary_log_std: 5.0f64.ln(),
            query_fidelity_logit: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.anchor_logits.len() + 2
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.anchor_logits.clone();
        v.push(self.boundary_log_std);
        v.push(self.query_fidelity_logit);
        v
    }

    pub fn from_vec(v: &[f64], max_events: usize) -> Option<Self> {
        if v.len() != max_events + 2 {
            return None;
        }
        Some(ProposerParams {
            anchor_logits: v[..max_events].to_vec(),
            boundary_log_std: v[max_events],
            query_fidelity_logit: v[max_events + 1],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|x| x.is_finite())
    }

    /// Finite, with a jitter scale whose exponential neither underflows to
    /// zero nor overflows; sampling is total on this domain.
    pub fn is_usable(&self) -> bool {
        let std = self.boundary_log_std.exp();
        self.is_finite() && std > 0.0 && std.is_finite()
    }
}

/// Solver policy parameters: a softmax temperature over candidate windows
/// (log scale) and a truncated-Gaussian boundary refinement jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub scan_temperature_log: f64,
    pub boundary_log_std: f64,
}

impl SolverParams {
    /// Untrained starting point: temperature 1, 5 s boundary std.
    pub fn initial() -> Self {
        SolverParams { scan_temperature_log: 0.0, boundary_log_std: 5.0f64.ln() }
    }

    pub fn dim(&self) -> usize {
        2
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.scan_temperature_log, self.boundary_log_std]
    }

    pub fn from_vec(v: &[f64]) -> Option<Self> {
        if v.len() != 2 {
            return None;
        }
        Some(SolverParams { scan_temperature_log: v[0], boundary_log_std: v[1] })
    }

    pub fn is_finite(&self) -> bool {
        self.scan_temperature_log.is_finite() && self.boundary_log_std.is_finite()
    }

    /// Finite, with usable jitter and temperature scales.
    pub fn is_usable(&self) -> bool {
        let std = self.boundary_log_std.exp();
        let temp = self.scan_temperature_log.exp();
        self.is_finite() && std > 0.0 && std.is_finite() && temp > 0.0 && temp.is_finite()
    }
}

/// One sampled response: rendered text, the structured action trace, its
/// exact log-density, and the analytic score gradient.
#[derive(Debug, Clone)]
pub struct Rollout<A> {
    pub rendered_text: String,
    pub actions: A,
    pub log_prob: f64,
    pub score_gradient: Vec<f64>,
}

/// Proposer action trace, in sampled order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposerTrace {
    /// Selected event indices (without replacement).
    pub anchors: Vec<usize>,
    /// Jittered `(start, end)` per anchor.
    pub boundaries: Vec<(f64, f64)>,
    /// Raw (pre-normalization) query observations per anchor.
    pub raw_queries: Vec<Vec<f64>>,
}

/// Solver action trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub choice: usize,
    pub boundary: (f64, f64),
}

mod truncnorm {
    //! Truncated normal on `[lo, hi]`: inverse-CDF sampling, exact
    //! log-density, and the density's derivative in `log sigma`.

    use statrs::distribution::{ContinuousCDF, Normal};

    const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

    fn std_normal() -> Normal {
        Normal::new(0.0, 1.0).expect("unit normal")
    }

    fn phi(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn mass(mean: f64, std: f64, lo: f64, hi: f64) -> (f64, f64, f64) {
        let n = std_normal();
        let alpha = (lo - mean) / std;
        let beta = (hi - mean) / std;
        let z = (n.cdf(beta) - n.cdf(alpha)).max(1e-300);
        (alpha, beta, z)
    }

    pub fn sample(u: f64, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
        debug_assert!(std > 0.0 && lo < hi && (lo..=hi).contains(&mean));
        let n = std_normal();
        let (alpha, _, z) = mass(mean, std, lo, hi);
        let p = (n.cdf(alpha) + u * z).clamp(1e-300, 1.0 - 1e-16);
        (mean + std * n.inverse_cdf(p)).clamp(lo, hi)
    }

    pub fn log_pdf(x: f64, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
        let (_, _, z) = mass(mean, std, lo, hi);
        let t = (x - mean) / std;
        -0.5 * t * t - std.ln() - LN_SQRT_2PI - z.ln()
    }

    /// `d log_pdf / d log(std)` for fixed `x`.
    pub fn dlogpdf_dlogstd(x: f64, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
        let (alpha, beta, z) = mass(mean, std, lo, hi);
        let t = (x - mean) / std;
        let tail = (alpha * phi(alpha) - beta * phi(beta)) / z;
        -1.0 + t * t - tail
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn fidelity_of(logit: f64) -> f64 {
    sigmoid(logit).clamp(FIDELITY_CLAMP, 1.0 - FIDELITY_CLAMP)
}

/// Query-noise std per coordinate for fidelity `f` in dimension `d`.
fn query_noise_std(f: f64, dim: usize) -> f64 {
    (1.0 - f) / (dim as f64).sqrt()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Log-density of sampling the anchor sequence without replacement under the
/// logits, with the per-logit gradient accumulated into `grad` when given.
fn anchor_log_prob(logits: &[f64], event_count: usize, anchors: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
    let mut remaining: Vec<usize> = (0..event_count).collect();
    let mut logp = 0.0;
    for &chosen in anchors {
        let sub: Vec<f64> = remaining.iter().map(|&i| logits[i]).collect();
        let probs = softmax(&sub);
        let pos = remaining.iter().position(|&i| i == chosen).expect("anchor in remaining set");
        logp += probs[pos].max(1e-300).ln();
        if let Some(g) = grad.as_deref_mut() {
            for (slot, &i) in remaining.iter().enumerate() {
                let indicator = if slot == pos { 1.0 } else { 0.0 };
                g[i] += indicator - probs[slot];
            }
        }
        remaining.remove(pos);
    }
    logp
}

/// Log-density of the raw query observations given the fidelity logit, with
/// the derivative in the logit accumulated when requested.
fn query_log_prob(
    video: &SyntheticVideo,
    fidelity_logit: f64,
    anchors: &[usize],
    raw_queries: &[Vec<f64>],
    mut dlogit: Option<&mut f64>,
) -> f64 {
    let f = fidelity_of(fidelity_logit);
    let mut logp = 0.0;
    for (anchor, raw) in anchors.iter().zip(raw_queries) {
        let latent = &video.events[*anchor].latent;
        let d = latent.len();
        let s = query_noise_std(f, d);
        let kappa = 1.0 / (d as f64).sqrt();
        let mut zl = 0.0;
        let mut zz = 0.0;
        for (x, l) in raw.iter().zip(latent) {
            let z = (x - f * l) / s;
            logp += -0.5 * z * z - s.ln() - 0.918_938_533_204_672_7;
            zl += z * l;
            zz += z * z;
        }
        if let Some(dl) = dlogit.as_deref_mut() {
            // d logp / df, then through the (clamped) sigmoid.
            let df = (d as f64 * kappa + zl - kappa * zz) / s;
            let raw_sig = sigmoid(fidelity_logit);
            let dsig = if (FIDELITY_CLAMP..=1.0 - FIDELITY_CLAMP).contains(&raw_sig) {
                raw_sig * (1.0 - raw_sig)
            } else {
                0.0
            };
            *dl += df * dsig;
        }
    }
    logp
}

fn boundary_log_prob(
    video: &SyntheticVideo,
    log_std: f64,
    anchors: &[usize],
    boundaries: &[(f64, f64)],
    mut dlogstd: Option<&mut f64>,
) -> f64 {
    let std = log_std.exp();
    let mut logp = 0.0;
    for (anchor, (s, e)) in anchors.iter().zip(boundaries) {
        let iv = video.events[*anchor].interval;
        for (x, mean) in [(*s, iv.start), (*e, iv.end)] {
            logp += truncnorm::log_pdf(x, mean, std, 0.0, video.duration);
            if let Some(d) = dlogstd.as_deref_mut() {
                *d += truncnorm::dlogpdf_dlogstd(x, mean, std, 0.0, video.duration);
            }
        }
    }
    logp
}

/// Sample a proposer response: up to `n` anchors without replacement,
/// jittered boundaries, noisy queries, rendered through the tag template.
pub fn proposer_sample(
    video: &SyntheticVideo,
    params: &ProposerParams,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Rollout<ProposerTrace> {
    debug_assert!(n >= 1);
    debug_assert!(video.events.len() <= params.anchor_logits.len());
    let event_count = video.events.len();
    let n_eff = n.min(event_count);
    let std = params.boundary_log_std.exp();
    let f = fidelity_of(params.query_fidelity_logit);

    let mut remaining: Vec<usize> = (0..event_count).collect();
    let mut anchors = Vec::with_capacity(n_eff);
    for _ in 0..n_eff {
        let sub: Vec<f64> = remaining.iter().map(|&i| params.anchor_logits[i]).collect();
        let probs = softmax(&sub);
        let pos = sample_categorical(rng, &probs);
        anchors.push(remaining.remove(pos));
    }

    let mut boundaries = Vec::with_capacity(n_eff);
    let mut raw_queries = Vec::with_capacity(n_eff);
    for &a in &anchors {
        let iv = video.events[a].interval;
        let s = truncnorm::sample(rng.gen(), iv.start, std, 0.0, video.duration);
        let e = truncnorm::sample(rng.gen(), iv.end, std, 0.0, video.duration);
        boundaries.push((s, e));
        let latent = &video.events[a].latent;
        let noise_std = query_noise_std(f, latent.len());
        let raw: Vec<f64> = latent
            .iter()
            .map(|l| f * l + noise_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        raw_queries.push(raw);
    }

    let trace = ProposerTrace { anchors, boundaries, raw_queries };
    let rendered_text = render_proposer_trace(video, &trace);
    let log_prob = proposer_log_prob(video, params, &trace);
    let score_gradient = proposer_score_gradient(video, params, &trace);
    Rollout { rendered_text, actions: trace, log_prob, score_gradient }
}

/// Render the trace's pairs in the proposer template: the emitted query is
/// the normalized raw observation.
pub fn render_proposer_trace(video: &SyntheticVideo, trace: &ProposerTrace) -> String {
    let pairs: Vec<QueryMoment> = trace
        .anchors
        .iter()
        .zip(&trace.boundaries)
        .zip(&trace.raw_queries)
        .map(|((&a, &(s, e)), raw)| {
            let norm = l2_norm(raw);
            let emitted: Vec<f64> = if norm < 1e-12 {
                video.events[a].latent.clone()
            } else {
                raw.iter().map(|x| x / norm).collect()
            };
            QueryMoment { query: render_latent(&emitted), moment: Moment::new(s, e) }
        })
        .collect();
    render_proposer(&pairs)
}

/// Exact log-density of a proposer trace under the given parameters.
pub fn proposer_log_prob(video: &SyntheticVideo, params: &ProposerParams, trace: &ProposerTrace) -> f64 {
    anchor_log_prob(&params.anchor_logits, video.events.len(), &trace.anchors, None)
        + boundary_log_prob(video, params.boundary_log_std, &trace.anchors, &trace.boundaries, None)
        + query_log_prob(video, params.query_fidelity_logit, &trace.anchors, &trace.raw_queries, None)
}

/// Analytic gradient of [`proposer_log_prob`] in the flattened parameter
/// vector `[anchor_logits.., boundary_log_std, query_fidelity_logit]`.
pub fn proposer_score_gradient(video: &SyntheticVideo, params: &ProposerParams, trace: &ProposerTrace) -> Vec<f64> {
    let mut logits_grad = vec![0.0; params.anchor_logits.len()];
    anchor_log_prob(&params.anchor_logits, video.events.len(), &trace.anchors, Some(&mut logits_grad));
    let mut d_log_std = 0.0;
    boundary_log_prob(video, params.boundary_log_std, &trace.anchors, &trace.boundaries, Some(&mut d_log_std));
    let mut d_fidelity = 0.0;
    query_log_prob(video, params.query_fidelity_logit, &trace.anchors, &trace.raw_queries, Some(&mut d_fidelity));
    let mut grad = logits_grad;
    grad.push(d_log_std);
    grad.push(d_fidelity);
    grad
}

fn solver_similarities(video: &SyntheticVideo, query_latent: &[f64]) -> Vec<f64> {
    let qn = l2_norm(query_latent).max(1e-12);
    video
        .events
        .iter()
        .map(|ev| {
            let dot: f64 = ev.latent.iter().zip(query_latent).map(|(a, b)| a * b).sum();
            (dot / qn).clamp(-1.0, 1.0)
        })
        .collect()
}

/// Sample a solver response: pick a candidate event by temperature-scaled
/// similarity softmax, refine its boundaries with truncated Gaussian jitter,
/// render the think/answer template.
pub fn solver_sample(
    video: &SyntheticVideo,
    query_latent: &[f64],
    params: &SolverParams,
    rng: &mut ChaCha8Rng,
) -> Rollout<SolverTrace> {
    let sims = solver_similarities(video, query_latent);
    let temp = params.scan_temperature_log.exp();
    let logits: Vec<f64> = sims.iter().map(|s| s / temp).collect();
    let probs = softmax(&logits);
    let choice = sample_categorical(rng, &probs);
    let std = params.boundary_log_std.exp();
    let iv = video.events[choice].interval;
    let s = truncnorm::sample(rng.gen(), iv.start, std, 0.0, video.duration);
    let e = truncnorm::sample(rng.gen(), iv.end, std, 0.0, video.duration);
    let trace = SolverTrace { choice, boundary: (s, e) };
    let rendered_text = render_solver(SOLVER_THINK_TEXT, Moment::new(s, e));
    let log_prob = solver_log_prob(video, query_latent, params, &trace);
    let score_gradient = solver_score_gradient(video, query_latent, params, &trace);
    Rollout { rendered_text, actions: trace, log_prob, score_gradient }
}

/// Exact log-density of a solver trace under the given parameters.
pub fn solver_log_prob(video: &SyntheticVideo, query_latent: &[f64], params: &SolverParams, trace: &SolverTrace) -> f64 {
    let sims = solver_similarities(video, query_latent);
    let temp = params.scan_temperature_log.exp();
    let logits: Vec<f64> = sims.iter().map(|s| s / temp).collect();
    let probs = softmax(&logits);
    let mut logp = probs[trace.choice].max(1e-300).ln();
    let std = params.boundary_log_std.exp();
    let iv = video.events[trace.choice].interval;
    logp += truncnorm::log_pdf(trace.boundary.0, iv.start, std, 0.0, video.duration);
    logp += truncnorm::log_pdf(trace.boundary.1, iv.end, std, 0.0, video.duration);
    logp
}

/// Analytic gradient of [`solver_log_prob`] in
/// `[scan_temperature_log, boundary_log_std]`.
pub fn solver_score_gradient(
    video: &SyntheticVideo,
    query_latent: &[f64],
    params: &SolverParams,
    trace: &SolverTrace,
) -> Vec<f64> {
    let sims = solver_similarities(video, query_latent);
    let temp = params.scan_temperature_log.exp();
    let logits: Vec<f64> = sims.iter().map(|s| s / temp).collect();
    let probs = softmax(&logits);
    let expected: f64 = probs.iter().zip(&sims).map(|(p, s)| p * s).sum();
    let d_temp = (expected - sims[trace.choice]) / temp;
    let std = params.boundary_log_std.exp();
    let iv = video.events[trace.choice].interval;
    let d_std = truncnorm::dlogpdf_dlogstd(trace.boundary.0, iv.start, std, 0.0, video.duration)
        + truncnorm::dlogpdf_dlogstd(trace.boundary.1, iv.end, std, 0.0, video.duration);
    vec![d_temp, d_std]
}

/// With probability `p`, delete one uniformly chosen closing tag; otherwise
/// return the text unchanged.
pub fn corrupt_template(text: &str, p: f64, rng: &mut ChaCha8Rng) -> String {
    debug_assert!((0.0..=1.0).contains(&p));
    if p <= 0.0 || rng.gen::<f64>() >= p {
        return text.to_string();
    }
    let closers = ["</time>", "</description>", "</think>", "</answer>"];
    let mut hits: Vec<(usize, usize)> = Vec::new();
    for tag in closers {
        for (at, _) in text.match_indices(tag) {
            hits.push((at, tag.len()));
        }
    }
    if hits.is_empty() {
        return text.to_string();
    }
    hits.sort_unstable();
    let (at, len) = hits[rng.gen_range(0..hits.len())];
    let mut out = String::with_capacity(text.len() - len);
    out.push_str(&text[..at]);
    out.push_str(&text[at + len..]);
    out
}
