//! The alternating two-stage self-evolving loop with its threshold
//! curriculum.
//!
//! Each iteration first optimizes the proposer against a frozen solver
//! (format / consistency / feedback channels, decoupled or summed
//! advantages), then optimizes the solver on pairs generated by the frozen
//! proposer (plain summed advantages over format + accuracy). Held-out
//! evaluation runs after every iteration on videos split off by id hash.
//!
//! All randomness is keyed by `(run seed, stage, iteration, step)`, so
//! re-running any iteration from its persisted parameters reproduces the
//! original records exactly.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::HarnessConfig;
use crate::embed::Embedder;
use crate::metrics::{mean_iou, EvalReport, EvalSample, MetricsError};
use crate::moment::Moment;
use crate::optimizer::{
    apply_gradient, gdpo_advantage_sets, grpo_advantages_eps, mean_weighted_gradient, Algorithm,
    ChannelWeights, GradAccumulator, OptimError, RewardMatrix,
};
use crate::parsing::{parse_proposer, parse_solver};
use crate::policies::{
    proposer_sample, solver_sample, ProposerParams, SolverParams,
};
use crate::rewards::{
    consistency_reward, feedback_reward, proposer_format_reward, solver_acc_reward,
    solver_format_reward, ProposerSample, RewardError,
};
use crate::rng::{derive_seed, fnv1a64, substream};
use crate::synthworld::{gen_corpus, SyntheticEmbedder, SyntheticVideo, WorldError};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("held-out corpus shares {0} video ids with the training corpus")]
    HeldOutOverlap(usize),
    #[error("held-out split is empty; decrease heldout_fraction or add videos")]
    EmptyHeldOut,
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("cannot serialize config snapshot: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

/// Proposer reward channels, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Format,
    Consistency,
    Feedback,
}

impl Channel {
    pub fn name(&self) -> &'static str {
        match self {
            Channel::Format => "format",
            Channel::Consistency => "consistency",
            Channel::Feedback => "feedback",
        }
    }
}

/// Per-channel aggregation weights, keyed by channel name in the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelWeightMap {
    pub format: Option<f64>,
    pub consistency: Option<f64>,
    pub feedback: Option<f64>,
}

impl ChannelWeightMap {
    pub fn get(&self, channel: Channel) -> Option<f64> {
        match channel {
            Channel::Format => self.format,
            Channel::Consistency => self.consistency,
            Channel::Feedback => self.feedback,
        }
    }

    fn to_weights(self, channels: &[Channel]) -> Result<ChannelWeights, EvolutionError> {
        let mut w = Vec::with_capacity(channels.len());
        for ch in channels {
            let value = self
                .get(*ch)
                .ok_or_else(|| EvolutionError::InvalidSchedule(format!("missing weight for channel {}", ch.name())))?;
            w.push(value);
        }
        ChannelWeights::new(w).map_err(|e| EvolutionError::InvalidSchedule(e.to_string()))
    }
}

/// One curriculum iteration: the solvability threshold, the active proposer
/// channels with their weights, and the stage lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSpec {
    pub delta: f64,
    pub channels: Vec<Channel>,
    pub weights: ChannelWeightMap,
    pub steps_proposer: usize,
    pub steps_solver: usize,
}

impl IterationSpec {
    /// Active channels in canonical order, deduplicated.
    pub fn ordered_channels(&self) -> Vec<Channel> {
        let set: BTreeSet<Channel> = self.channels.iter().copied().collect();
        set.into_iter().collect()
    }
}

/// The ordered iteration list. The threshold must be non-decreasing and the
/// first iteration is a format-only warm-up at threshold zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub iterations: Vec<IterationSpec>,
}

impl CurriculumSchedule {
    /// Three iterations with threshold 0 -> 0.3 -> 0.5, all channels from
    /// iteration 2 with weights (0.5, 0.5, 1.0).
    pub fn default_desk() -> Self {
        let all = vec![Channel::Format, Channel::Consistency, Channel::Feedback];
        let weights = ChannelWeightMap { format: Some(0.5), consistency: Some(0.5), feedback: Some(1.0) };
        CurriculumSchedule {
            iterations: vec![
                IterationSpec {
                    delta: 0.0,
                    channels: vec![Channel::Format],
                    weights: ChannelWeightMap { format: Some(1.0), ..Default::default() },
                    steps_proposer: 200,
                    steps_solver: 200,
                },
                IterationSpec { delta: 0.3, channels: all.clone(), weights, steps_proposer: 200, steps_solver: 200 },
                IterationSpec { delta: 0.5, channels: all, weights, steps_proposer: 200, steps_solver: 200 },
            ],
        }
    }

    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: String| Err(EvolutionError::InvalidSchedule(m));
        if self.iterations.is_empty() {
            return bad("schedule needs at least one iteration".into());
        }
        let mut prev_delta = f64::NEG_INFINITY;
        for (i, spec) in self.iterations.iter().enumerate() {
            if !(spec.delta.is_finite() && (0.0..=1.0).contains(&spec.delta)) {
                return bad(format!("iteration {}: delta {} outside [0, 1]", i + 1, spec.delta));
            }
            if spec.delta < prev_delta {
                return bad(format!("iteration {}: delta must be non-decreasing", i + 1));
            }
            prev_delta = spec.delta;
            let channels = spec.ordered_channels();
            if channels.is_empty() {
                return bad(format!("iteration {}: no active channels", i + 1));
            }
            if i == 0 && (channels != vec![Channel::Format] || spec.delta != 0.0) {
                return bad("iteration 1 must be format-only with delta 0".into());
            }
            spec.weights.to_weights(&channels)?;
        }
        Ok(())
    }
}

/// Which agent a step record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Proposer,
    Solver,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Proposer => "proposer",
            Stage::Solver => "solver",
        }
    }
}

/// One optimization step's log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Absolute position in the schedule; doubles as a logical timestamp.
    pub seq: u64,
    pub iteration: usize,
    pub stage: Stage,
    pub step: usize,
    /// `(channel, mean reward)` over the step's rollouts, fixed order.
    pub channel_means: Vec<(String, f64)>,
    pub mean_advantage: f64,
    pub mean_abs_advantage: f64,
    pub proposer_param_norm: f64,
    pub solver_param_norm: f64,
}

impl StepRecord {
    pub fn channel_mean(&self, name: &str) -> Option<f64> {
        self.channel_means.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Full run record: step lines plus one evaluation report per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub reports: Vec<EvalReport>,
    pub error: Option<String>,
}

/// Snapshot of one completed iteration: both parameter vectors, the number
/// of query-moment pairs the solver stage consumed, and the held-out
/// report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub iteration: usize,
    pub proposer: ProposerParams,
    pub solver: SolverParams,
    pub generated_pairs: usize,
    pub eval: EvalReport,
}

/// Everything a completed (or aborted) run produces in memory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    /// One snapshot per completed iteration.
    pub iterations: Vec<IterationState>,
    pub proposer: ProposerParams,
    pub solver: SolverParams,
    /// Held-out report of the untrained solver.
    pub untrained: EvalReport,
    /// Monte Carlo random-interval baseline: mean mIoU and its 2.5/97.5
    /// percentile band over repetitions.
    pub random_baseline_miou: f64,
    pub random_baseline_ci: (f64, f64),
    pub train_ids: Vec<String>,
    pub heldout_ids: Vec<String>,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        self.log.error.is_some()
    }

    /// Held-out mIoU after the given iteration (1-based).
    pub fn miou_at_iteration(&self, iteration: usize) -> Option<f64> {
        self.log.reports.get(iteration - 1).map(|r| r.miou)
    }
}

/// Shared state for one stage invocation.
pub struct StageContext<'a> {
    pub cfg: &'a HarnessConfig,
    pub run_seed: u64,
    /// 1-based iteration index.
    pub iteration: usize,
    /// Absolute sequence number of the stage's first step, minus one.
    pub seq_base: u64,
}

fn param_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mean_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

enum StepError {
    NonFinite { step: usize },
    Other(EvolutionError),
}

impl From<EvolutionError> for StepError {
    fn from(e: EvolutionError) -> Self {
        StepError::Other(e)
    }
}

impl From<OptimError> for StepError {
    fn from(e: OptimError) -> Self {
        StepError::Other(e.into())
    }
}

impl From<RewardError> for StepError {
    fn from(e: RewardError) -> Self {
        StepError::Other(e.into())
    }
}

/// Optimize the proposer for one stage while the solver stays frozen.
///
/// Returns the updated parameters and the per-step records; on a non-finite
/// parameter abort the records collected so far ride along in the error
/// variant.
pub fn run_proposer_stage(
    corpus: &[SyntheticVideo],
    proposer: &ProposerParams,
    frozen_solver: &SolverParams,
    spec: &IterationSpec,
    ctx: &StageContext,
) -> Result<(ProposerParams, Vec<StepRecord>), (Vec<StepRecord>, EvolutionError)> {
    let mut params = proposer.clone();
    let mut records = Vec::with_capacity(spec.steps_proposer);
    let cfg = ctx.cfg;
    let channels = spec.ordered_channels();
    let weights = spec
        .weights
        .to_weights(&channels)
        .map_err(|e| (Vec::new(), e))?;
    let mut acc = GradAccumulator::new(params.dim(), cfg.optimizer.accumulation);

    let run_step = |step: usize, params: &mut ProposerParams, acc: &mut GradAccumulator| -> Result<StepRecord, StepError> {
        let mut rng = substream(ctx.run_seed, "proposer-step", &[ctx.iteration as u64, step as u64]);
        let g = cfg.training.rollouts_per_prompt;
        let n = cfg.training.pairs_per_video;
        let need_solver = spec.delta > 0.0 || channels.contains(&Channel::Feedback);

        let mut groups = Vec::with_capacity(cfg.training.videos_per_step);
        let mut gradients = Vec::with_capacity(cfg.training.videos_per_step * g);
        let mut channel_values: Vec<Vec<f64>> = vec![Vec::new(); channels.len()];
        let mut uncond_values = Vec::new();

        for v_slot in 0..cfg.training.videos_per_step {
            let video = &corpus[rng.gen_range(0..corpus.len())];
            let embedder = SyntheticEmbedder::new(video, cfg.world.frame_noise);
            let mut rows = Vec::with_capacity(g);
            for _ in 0..g {
                let rollout = proposer_sample(video, params, n, &mut rng);
                let output = parse_proposer(&rollout.rendered_text, n);
                let mut predictions = vec![Moment::ZERO; n];
                if need_solver {
                    for slot in 0..output.parsed {
                        let pair = &output.pairs[slot];
                        if !pair.moment.is_well_formed() {
                            continue;
                        }
                        if let Some(q) = embedder.resolve_query(&pair.query) {
                            let sr = solver_sample(video, &q, frozen_solver, &mut rng);
                            if let Some(answer) = parse_solver(&sr.rendered_text).answer_moment {
                                predictions[slot] = answer;
                            }
                        }
                    }
                }
                let sample = ProposerSample { output, predictions, video_duration: video.duration };
                let mut row = Vec::with_capacity(channels.len());
                for (k, ch) in channels.iter().enumerate() {
                    let value = match ch {
                        Channel::Format => proposer_format_reward(&sample, cfg.rewards.min_length, spec.delta),
                        Channel::Consistency => consistency_reward(&sample, &embedder, &cfg.rewards.consistency)?,
                        Channel::Feedback => feedback_reward(&sample),
                    };
                    channel_values[k].push(value);
                    row.push(value);
                }
                uncond_values.push(proposer_format_reward(&sample, cfg.rewards.min_length, 0.0));
                rows.push(row);
                gradients.push(rollout.score_gradient);
            }
            groups.push(RewardMatrix::new(v_slot, rows).map_err(EvolutionError::from)?);
        }

        let eps = cfg.optimizer.epsilon;
        let advantages: Vec<Vec<f64>> = match cfg.optimizer.algorithm {
            Algorithm::Gdpo => gdpo_advantage_sets(&groups, &weights, eps)
                .map_err(EvolutionError::from)?
                .into_iter()
                .map(|set| set.batch_normalized)
                .collect(),
            Algorithm::Grpo => {
                let mut advs = Vec::with_capacity(groups.len());
                for m in &groups {
                    advs.push(grpo_advantages_eps(&m.row_sums(), eps)?);
                }
                advs
            }
        };
        let flat: Vec<f64> = advantages.iter().flatten().copied().collect();
        let step_grad = mean_weighted_gradient(
            params.dim(),
            gradients.iter().map(|g| g.as_slice()).zip(flat.iter().copied()),
        )?;
        if let Some(update) = acc.push(&step_grad) {
            let next = apply_gradient(&params.to_vec(), &update, cfg.optimizer.lr);
            *params = ProposerParams::from_vec(&next, params.anchor_logits.len()).expect("shape preserved");
            if !params.is_usable() {
                return Err(StepError::NonFinite { step });
            }
        }

        let mut channel_means: Vec<(String, f64)> = channels
            .iter()
            .zip(&channel_values)
            .map(|(ch, vals)| (ch.name().to_string(), mean_of(vals)))
            .collect();
        channel_means.push(("format_uncond".to_string(), mean_of(&uncond_values)));
        Ok(StepRecord {
            seq: ctx.seq_base + step as u64,
            iteration: ctx.iteration,
            stage: Stage::Proposer,
            step,
            channel_means,
            mean_advantage: mean_of(&flat),
            mean_abs_advantage: mean_of(&flat.iter().map(|a| a.abs()).collect::<Vec<_>>()),
            proposer_param_norm: param_norm(&params.to_vec()),
            solver_param_norm: param_norm(&frozen_solver.to_vec()),
        })
    };

    for step in 1..=spec.steps_proposer {
        match run_step(step, &mut params, &mut acc) {
            Ok(record) => records.push(record),
            Err(StepError::NonFinite { step }) => {
                return Err((
                    records,
                    EvolutionError::InvalidConfig(format!(
                        "proposer parameters became non-finite or unusable at iteration {} step {step}",
                        ctx.iteration
                    )),
                ));
            }
            Err(StepError::Other(e)) => return Err((records, e)),
        }
    }
    if let Some(update) = acc.flush() {
        let next = apply_gradient(&params.to_vec(), &update, cfg.optimizer.lr);
        params = ProposerParams::from_vec(&next, params.anchor_logits.len()).expect("shape preserved");
        if !params.is_usable() {
            return Err((
                records,
                EvolutionError::InvalidConfig(format!(
                    "proposer parameters became non-finite or unusable at iteration {} flush",
                    ctx.iteration
                )),
            ));
        }
    }
    Ok((params, records))
}

/// Optimize the solver for one stage on pairs generated by the frozen
/// proposer. The solver always trains on plain summed-reward advantages.
///
/// Returns the updated parameters, the per-step records, and the number of
/// query-moment pairs consumed.
pub fn run_solver_stage(
    corpus: &[SyntheticVideo],
    frozen_proposer: &ProposerParams,
    solver: &SolverParams,
    spec: &IterationSpec,
    ctx: &StageContext,
) -> Result<(SolverParams, Vec<StepRecord>, usize), (Vec<StepRecord>, EvolutionError)> {
    let mut params = solver.clone();
    let mut records = Vec::with_capacity(spec.steps_solver);
    let mut pairs_consumed = 0usize;
    let cfg = ctx.cfg;
    let mut acc = GradAccumulator::new(params.dim(), cfg.optimizer.accumulation);

    let run_step = |step: usize,
                    params: &mut SolverParams,
                    acc: &mut GradAccumulator,
                    pairs_consumed: &mut usize|
     -> Result<StepRecord, StepError> {
        let mut rng = substream(ctx.run_seed, "solver-step", &[ctx.iteration as u64, step as u64]);
        let g = cfg.training.rollouts_per_prompt;
        let n = cfg.training.pairs_per_video;

        let mut group_sums: Vec<Vec<f64>> = Vec::new();
        let mut gradients: Vec<Vec<f64>> = Vec::new();
        let mut fmt_values = Vec::new();
        let mut acc_values = Vec::new();

        for _ in 0..cfg.training.videos_per_step {
            let video = &corpus[rng.gen_range(0..corpus.len())];
            let embedder = SyntheticEmbedder::new(video, cfg.world.frame_noise);
            let rollout = proposer_sample(video, frozen_proposer, n, &mut rng);
            let output = parse_proposer(&rollout.rendered_text, n);
            for slot in 0..output.parsed {
                let pair = &output.pairs[slot];
                if !pair.moment.is_well_formed() {
                    continue;
                }
                let Some(q) = embedder.resolve_query(&pair.query) else { continue };
                let mut sums = Vec::with_capacity(g);
                for _ in 0..g {
                    let sr = solver_sample(video, &q, params, &mut rng);
                    let sout = parse_solver(&sr.rendered_text);
                    let r_fmt = solver_format_reward(&sout);
                    let r_acc = solver_acc_reward(&pair.moment, &sout, video.duration);
                    fmt_values.push(r_fmt);
                    acc_values.push(r_acc);
                    sums.push(r_fmt + r_acc);
                    gradients.push(sr.score_gradient);
                }
                group_sums.push(sums);
            }
        }

        *pairs_consumed += group_sums.len();
        let mut flat = Vec::with_capacity(gradients.len());
        for sums in &group_sums {
            flat.extend(grpo_advantages_eps(sums, cfg.optimizer.epsilon)?);
        }
        let step_grad = mean_weighted_gradient(
            params.dim(),
            gradients.iter().map(|g| g.as_slice()).zip(flat.iter().copied()),
        )?;
        if let Some(update) = acc.push(&step_grad) {
            let next = apply_gradient(&params.to_vec(), &update, cfg.optimizer.lr);
            *params = SolverParams::from_vec(&next).expect("shape preserved");
            if !params.is_usable() {
                return Err(StepError::NonFinite { step });
            }
        }

        Ok(StepRecord {
            seq: ctx.seq_base + step as u64,
            iteration: ctx.iteration,
            stage: Stage::Solver,
            step,
            channel_means: vec![
                ("solver_format".to_string(), mean_of(&fmt_values)),
                ("solver_acc".to_string(), mean_of(&acc_values)),
            ],
            mean_advantage: mean_of(&flat),
            mean_abs_advantage: mean_of(&flat.iter().map(|a| a.abs()).collect::<Vec<_>>()),
            proposer_param_norm: param_norm(&frozen_proposer.to_vec()),
            solver_param_norm: param_norm(&params.to_vec()),
        })
    };

    for step in 1..=spec.steps_solver {
        match run_step(step, &mut params, &mut acc, &mut pairs_consumed) {
            Ok(record) => records.push(record),
            Err(StepError::NonFinite { step }) => {
                return Err((
                    records,
                    EvolutionError::InvalidConfig(format!(
                        "solver parameters became non-finite or unusable at iteration {} step {step}",
                        ctx.iteration
                    )),
                ));
            }
            Err(StepError::Other(e)) => return Err((records, e)),
        }
    }
    if let Some(update) = acc.flush() {
        let next = apply_gradient(&params.to_vec(), &update, cfg.optimizer.lr);
        params = SolverParams::from_vec(&next).expect("shape preserved");
        if !params.is_usable() {
            return Err((
                records,
                EvolutionError::InvalidConfig(format!(
                    "solver parameters became non-finite or unusable at iteration {} flush",
                    ctx.iteration
                )),
            ));
        }
    }
    Ok((params, records, pairs_consumed))
}

/// Split a corpus into train/held-out parts by id hash.
pub fn split_corpus(corpus: &[SyntheticVideo], heldout_fraction: f64) -> (Vec<SyntheticVideo>, Vec<SyntheticVideo>) {
    let cut = (heldout_fraction * 10_000.0).round() as u64;
    let mut train = Vec::new();
    let mut held = Vec::new();
    for v in corpus {
        if fnv1a64(v.id.as_bytes()) % 10_000 < cut {
            held.push(v.clone());
        } else {
            train.push(v.clone());
        }
    }
    (train, held)
}

/// Evaluate the solver on held-out videos: one query per ground-truth event
/// (the uncorrupted event latent), one sampled prediction per query.
///
/// Errors if any held-out id also appears in `train_ids`.
pub fn held_out_eval(
    held: &[SyntheticVideo],
    solver: &SolverParams,
    train_ids: &BTreeSet<String>,
    cfg: &HarnessConfig,
    seed: u64,
) -> Result<EvalReport, EvolutionError> {
    let overlap = held.iter().filter(|v| train_ids.contains(&v.id)).count();
    if overlap > 0 {
        return Err(EvolutionError::HeldOutOverlap(overlap));
    }
    let mut rng = substream(seed, "heldout-eval", &[]);
    let mut samples = Vec::new();
    for video in held {
        for ev in &video.events {
            let r = solver_sample(video, &ev.latent, solver, &mut rng);
            let pred = parse_solver(&r.rendered_text).answer_moment.unwrap_or(Moment::ZERO);
            samples.push(EvalSample { gt: ev.interval, pred, video_duration: video.duration });
        }
    }
    Ok(EvalReport::compute(
        &samples,
        &cfg.training.eval_thresholds,
        cfg.training.bootstrap_resamples,
        derive_seed(seed, "heldout-ci", &[]),
    )?)
}

/// Monte Carlo baseline: uniformly random intervals per held-out event.
/// Returns the mean mIoU over repetitions and its empirical 2.5/97.5
/// percentile band.
pub fn random_interval_baseline(
    held: &[SyntheticVideo],
    reps: usize,
    seed: u64,
) -> Result<(f64, (f64, f64)), EvolutionError> {
    let mut rng = substream(seed, "random-baseline", &[]);
    let mut mious = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut samples = Vec::new();
        for video in held {
            for ev in &video.events {
                let a = rng.gen_range(0.0..video.duration);
                let b = rng.gen_range(0.0..video.duration);
                let pred = Moment::new(a.min(b), a.max(b));
                samples.push(EvalSample { gt: ev.interval, pred, video_duration: video.duration });
            }
        }
        mious.push(mean_iou(&samples)?);
    }
    mious.sort_by(|a, b| a.total_cmp(b));
    let mean = mean_of(&mious);
    let lo = mious[((mious.len() - 1) as f64 * 0.025).floor() as usize];
    let hi = mious[((mious.len() - 1) as f64 * 0.975).ceil() as usize];
    Ok((mean, (lo, hi)))
}

mod persist {
    //! Run-directory layout: config snapshot, per-iteration parameter files,
    //! step log as one JSON record per line, per-iteration report CSVs.

    use super::*;
    use std::fs;
    use std::io::Write;

    pub const PARAMS_FORMAT: &str = "policy-params";
    pub const PARAMS_VERSION: u32 = 1;

    #[derive(Serialize, Deserialize)]
    pub struct ParamFile<T> {
        pub format: String,
        pub version: u32,
        pub role: String,
        pub params: T,
    }

    pub fn save_params<T: Serialize>(path: &Path, role: &str, params: &T) -> Result<(), EvolutionError> {
        let file = ParamFile {
            format: PARAMS_FORMAT.to_string(),
            version: PARAMS_VERSION,
            role: role.to_string(),
            params,
        };
        fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_params<T: for<'de> Deserialize<'de>>(path: &Path, role: &str) -> Result<T, EvolutionError> {
        let text = fs::read_to_string(path)?;
        let file: ParamFile<T> = serde_json::from_str(&text)?;
        if file.format != PARAMS_FORMAT || file.version != PARAMS_VERSION || file.role != role {
            return Err(EvolutionError::InvalidConfig(format!(
                "parameter file {} is not a {role} {PARAMS_FORMAT} v{PARAMS_VERSION}",
                path.display()
            )));
        }
        Ok(file.params)
    }

    pub fn append_steps(path: &Path, records: &[StepRecord]) -> Result<(), EvolutionError> {
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        for r in records {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        Ok(())
    }

    pub fn read_steps(path: &Path) -> Result<Vec<StepRecord>, EvolutionError> {
        let text = fs::read_to_string(path)?;
        let mut out = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(line)?);
        }
        Ok(out)
    }
}

pub use persist::{load_params, read_steps, save_params};

/// Run summary persisted beside the logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_seed: u64,
    pub algorithm: Algorithm,
    pub status: String,
    pub error: Option<String>,
    pub train_ids: Vec<String>,
    pub heldout_ids: Vec<String>,
    /// Pairs consumed by the solver stage, one entry per iteration.
    pub generated_pairs: Vec<usize>,
    pub reports: Vec<EvalReport>,
    pub untrained: EvalReport,
    pub random_baseline_miou: f64,
    pub random_baseline_ci: (f64, f64),
}

/// Execute the full schedule: alternate proposer and solver stages, evaluate
/// after each iteration, optionally persisting everything under `out_dir`.
///
/// A stage abort (non-finite parameters) marks the run failed and preserves
/// the partial logs instead of returning an error.
pub fn run_evolution(cfg: &HarnessConfig, run_seed: u64, out_dir: Option<&Path>) -> Result<RunOutcome, EvolutionError> {
    cfg.validate().map_err(|e| EvolutionError::InvalidConfig(e.to_string()))?;
    let corpus = gen_corpus(&cfg.world)?;
    let (train, held) = split_corpus(&corpus, cfg.training.heldout_fraction);
    if held.is_empty() || train.is_empty() {
        return Err(EvolutionError::EmptyHeldOut);
    }
    let train_ids: BTreeSet<String> = train.iter().map(|v| v.id.clone()).collect();
    let heldout_ids: Vec<String> = held.iter().map(|v| v.id.clone()).collect();

    let mut proposer = ProposerParams::initial(cfg.world.events_per_video.1);
    let mut solver = SolverParams::initial();

    let untrained = held_out_eval(&held, &solver, &train_ids, cfg, derive_seed(run_seed, "eval", &[0]))?;
    let (random_baseline_miou, random_baseline_ci) =
        random_interval_baseline(&held, cfg.training.baseline_reps, derive_seed(run_seed, "baseline", &[]))?;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("params"))?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
        // Fresh step log on re-run into the same directory.
        let steps_path = dir.join("steps.jsonl");
        if steps_path.exists() {
            std::fs::remove_file(&steps_path)?;
        }
        save_params(&dir.join("params/init_proposer.json"), "proposer", &proposer)?;
        save_params(&dir.join("params/init_solver.json"), "solver", &solver)?;
    }

    let mut log = RunLog { steps: Vec::new(), reports: Vec::new(), error: None };
    let mut iterations: Vec<IterationState> = Vec::new();
    let mut seq_base = 0u64;

    'iterations: for (idx, spec) in cfg.schedule.iterations.iter().enumerate() {
        let iteration = idx + 1;
        let ctx = StageContext { cfg, run_seed, iteration, seq_base };
        match run_proposer_stage(&train, &proposer, &solver, spec, &ctx) {
            Ok((next, records)) => {
                if let Some(dir) = out_dir {
                    persist::append_steps(&dir.join("steps.jsonl"), &records)?;
                }
                log.steps.extend(records);
                proposer = next;
            }
            Err((records, e)) => {
                if let Some(dir) = out_dir {
                    persist::append_steps(&dir.join("steps.jsonl"), &records)?;
                }
                log.steps.extend(records);
                log.error = Some(e.to_string());
                break 'iterations;
            }
        }
        seq_base += spec.steps_proposer as u64;

        let ctx = StageContext { cfg, run_seed, iteration, seq_base };
        let pairs_this_iteration = match run_solver_stage(&train, &proposer, &solver, spec, &ctx) {
            Ok((next, records, pairs)) => {
                if let Some(dir) = out_dir {
                    persist::append_steps(&dir.join("steps.jsonl"), &records)?;
                }
                log.steps.extend(records);
                solver = next;
                pairs
            }
            Err((records, e)) => {
                if let Some(dir) = out_dir {
                    persist::append_steps(&dir.join("steps.jsonl"), &records)?;
                }
                log.steps.extend(records);
                log.error = Some(e.to_string());
                break 'iterations;
            }
        };
        seq_base += spec.steps_solver as u64;

        let report = held_out_eval(&held, &solver, &train_ids, cfg, derive_seed(run_seed, "eval", &[iteration as u64]))?;
        if let Some(dir) = out_dir {
            std::fs::write(dir.join(format!("eval_iter{iteration:02}.csv")), report.to_csv())?;
            save_params(&dir.join(format!("params/iter{iteration:02}_proposer.json")), "proposer", &proposer)?;
            save_params(&dir.join(format!("params/iter{iteration:02}_solver.json")), "solver", &solver)?;
        }
        iterations.push(IterationState {
            iteration,
            proposer: proposer.clone(),
            solver: solver.clone(),
            generated_pairs: pairs_this_iteration,
            eval: report.clone(),
        });
        log.reports.push(report);
    }

    let outcome = RunOutcome {
        log,
        iterations,
        proposer,
        solver,
        untrained,
        random_baseline_miou,
        random_baseline_ci,
        train_ids: train_ids.iter().cloned().collect(),
        heldout_ids,
    };

    if let Some(dir) = out_dir {
        save_params(&dir.join("params/final_proposer.json"), "proposer", &outcome.proposer)?;
        save_params(&dir.join("params/final_solver.json"), "solver", &outcome.solver)?;
        if let Some(last) = outcome.log.reports.last() {
            std::fs::write(dir.join("final_report.csv"), last.to_csv())?;
        }
        let summary = RunSummary {
            run_seed,
            algorithm: cfg.optimizer.algorithm,
            status: if outcome.failed() { "failed".into() } else { "ok".into() },
            error: outcome.log.error.clone(),
            train_ids: outcome.train_ids.clone(),
            heldout_ids: outcome.heldout_ids.clone(),
            generated_pairs: outcome.iterations.iter().map(|i| i.generated_pairs).collect(),
            reports: outcome.log.reports.clone(),
            untrained: outcome.untrained.clone(),
            random_baseline_miou: outcome.random_baseline_miou,
            random_baseline_ci: outcome.random_baseline_ci,
        };
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }

    Ok(outcome)
}

/// Evaluate arbitrary solver parameters on a full corpus (used by the
/// standalone eval command). The corpus plays the held-out role; ids are
/// checked against `train_ids` when provided.
pub fn eval_on_corpus(
    corpus: &[SyntheticVideo],
    solver: &SolverParams,
    train_ids: &BTreeSet<String>,
    cfg: &HarnessConfig,
    seed: u64,
) -> Result<EvalReport, EvolutionError> {
    held_out_eval(corpus, solver, train_ids, cfg, seed)
}
