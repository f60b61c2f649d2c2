//! The harness commands. Each returns the path of its primary artifact so
//! callers (and tests) can inspect the outputs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use groundloop::config::HarnessConfig;
use groundloop::evolution::{
    eval_on_corpus, load_params, read_steps, run_evolution, RunOutcome, RunSummary, Stage,
};
use groundloop::optimizer::Algorithm;
use groundloop::policies::{proposer_sample, ProposerParams, SolverParams};
use groundloop::rng::substream;
use groundloop::synthworld::{cosine_similarity, gen_corpus, load_corpus, save_corpus};
use sha2::{Digest, Sha256};

use crate::ablation::{subset_config, AblationSpec};
use crate::HarnessError;

/// Histogram bins for the normalized start/end time distributions.
const HIST_BINS: usize = 20;

fn load_config(path: &Path) -> Result<HarnessConfig, HarnessError> {
    Ok(HarnessConfig::load(path)?)
}

/// Validate a config file and print a one-line summary.
pub fn validate(config_path: &Path) -> Result<(), HarnessError> {
    let cfg = load_config(config_path)?;
    println!(
        "ok: {} videos, {} iterations, algorithm {}, seeds {:?}",
        cfg.world.videos,
        cfg.schedule.iterations.len(),
        cfg.optimizer.algorithm,
        cfg.seeds
    );
    Ok(())
}

/// Generate the corpus file and its sha256 checksum sidecar.
pub fn gen_corpus_cmd(config_path: &Path, out: Option<&Path>) -> Result<PathBuf, HarnessError> {
    let cfg = load_config(config_path)?;
    let corpus = gen_corpus(&cfg.world)?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => cfg.output_dir.join("corpus.jsonl"),
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_corpus(&path, &corpus, &cfg.world)?;
    let bytes = std::fs::read(&path)?;
    let digest = Sha256::digest(&bytes);
    let checksum = format!("{digest:x}");
    std::fs::write(path.with_extension("jsonl.sha256"), format!("{checksum}\n"))?;
    println!("wrote {} ({} videos), sha256 {checksum}", path.display(), corpus.len());
    Ok(path)
}

/// Overrides for the train command.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub algorithm: Option<Algorithm>,
    pub iterations: Option<usize>,
}

fn apply_overrides(cfg: &mut HarnessConfig, opts: &TrainOptions) -> Result<u64, HarnessError> {
    if let Some(alg) = opts.algorithm {
        cfg.optimizer.algorithm = alg;
    }
    if let Some(k) = opts.iterations {
        if k == 0 || k > cfg.schedule.iterations.len() {
            return Err(HarnessError::Usage(format!(
                "--iterations {k} outside 1..={}",
                cfg.schedule.iterations.len()
            )));
        }
        cfg.schedule.iterations.truncate(k);
    }
    Ok(opts.seed.unwrap_or(cfg.seeds[0]))
}

/// Run the full loop for one seed, writing the run directory.
pub fn train(config_path: &Path, opts: &TrainOptions) -> Result<PathBuf, HarnessError> {
    let mut cfg = load_config(config_path)?;
    let seed = apply_overrides(&mut cfg, opts)?;
    let run_dir = match &opts.out {
        Some(p) => p.clone(),
        None => cfg.output_dir.join(format!("run-seed{seed}")),
    };
    std::fs::create_dir_all(&run_dir)?;
    let outcome = run_evolution(&cfg, seed, Some(&run_dir))?;
    if let Some(err) = &outcome.log.error {
        return Err(HarnessError::Runtime(format!(
            "run aborted ({err}); partial artifacts preserved in {}",
            run_dir.display()
        )));
    }
    print_outcome(seed, &outcome);
    println!("run directory: {}", run_dir.display());
    Ok(run_dir)
}

fn print_outcome(seed: u64, outcome: &RunOutcome) {
    println!(
        "seed {seed}: untrained mIoU {:.2}, random baseline {:.2}",
        outcome.untrained.miou, outcome.random_baseline_miou
    );
    for (i, rep) in outcome.log.reports.iter().enumerate() {
        println!("  iteration {}: mIoU {:.2}, F1 {:.2}", i + 1, rep.miou, rep.f1);
    }
}

/// Evaluate a run's final solver on a corpus file, writing the report CSV
/// into the run directory.
pub fn eval(run_dir: &Path, corpus_path: &Path) -> Result<PathBuf, HarnessError> {
    let cfg_path = run_dir.join("config.toml");
    if !cfg_path.exists() {
        return Err(HarnessError::Usage(format!("{} has no config.toml", run_dir.display())));
    }
    let cfg = load_config(&cfg_path)?;
    let corpus = load_corpus(corpus_path)?;
    let solver: SolverParams = load_params(&run_dir.join("params/final_solver.json"), "solver")
        .map_err(|e| HarnessError::Usage(format!("cannot load solver params: {e}")))?;
    let summary_path = run_dir.join("summary.json");
    let (train_ids, seed) = if summary_path.exists() {
        let summary: RunSummary = serde_json::from_str(&std::fs::read_to_string(&summary_path)?)?;
        (summary.train_ids.into_iter().collect::<BTreeSet<_>>(), summary.run_seed)
    } else {
        (BTreeSet::new(), cfg.seeds[0])
    };
    let report = eval_on_corpus(&corpus, &solver, &train_ids, &cfg, seed)?;
    let out = run_dir.join("eval_external.csv");
    std::fs::write(&out, report.to_csv())?;
    println!("{}", report.to_csv().trim_end());
    Ok(out)
}

/// Per-subset generated-data statistics backing the distribution analysis:
/// moment-length moments, normalized start/end histograms, and the
/// correlation between query fidelity and moment length.
#[derive(Debug, Clone)]
pub struct DataStats {
    pub pairs: usize,
    pub length_mean: f64,
    pub length_std: f64,
    pub fidelity_length_corr: f64,
    pub start_hist: Vec<usize>,
    pub end_hist: Vec<usize>,
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Sample the trained proposer over the training corpus and summarize the
/// generated pairs. Two rollouts per video, stats keyed off the run seed.
pub fn collect_data_stats(
    cfg: &HarnessConfig,
    proposer: &ProposerParams,
    seed: u64,
) -> Result<DataStats, HarnessError> {
    let corpus = gen_corpus(&cfg.world)?;
    let mut rng = substream(seed, "ablation-stats", &[]);
    let mut lengths = Vec::new();
    let mut fidelities = Vec::new();
    let mut start_hist = vec![0usize; HIST_BINS];
    let mut end_hist = vec![0usize; HIST_BINS];
    for video in &corpus {
        for _ in 0..2 {
            let rollout = proposer_sample(video, proposer, cfg.training.pairs_per_video, &mut rng);
            for ((&anchor, &(s, e)), raw) in rollout
                .actions
                .anchors
                .iter()
                .zip(&rollout.actions.boundaries)
                .zip(&rollout.actions.raw_queries)
            {
                lengths.push((e - s).max(0.0));
                let latent = &video.events[anchor].latent;
                let fid = cosine_similarity(raw, latent).unwrap_or(0.0);
                fidelities.push(fid);
                let bin = |t: f64| (((t / video.duration) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
                start_hist[bin(s)] += 1;
                end_hist[bin(e)] += 1;
            }
        }
    }
    let n = lengths.len() as f64;
    let mean = lengths.iter().sum::<f64>() / n;
    let std = (lengths.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n).sqrt();
    Ok(DataStats {
        pairs: lengths.len(),
        length_mean: mean,
        length_std: std,
        fidelity_length_corr: pearson(&fidelities, &lengths),
        start_hist,
        end_hist,
    })
}

/// One row of the ablation comparison.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub subset: String,
    pub seed: u64,
    pub report: groundloop::metrics::EvalReport,
    pub stats: DataStats,
}

/// In-memory ablation sweep: one run per subset per seed, all starting from
/// the same initial parameters.
pub fn run_ablation(cfg: &HarnessConfig, spec: &AblationSpec) -> Result<Vec<AblationRow>, HarnessError> {
    spec.validate()?;
    let mut rows = Vec::new();
    for subset in &spec.subsets {
        let scfg = subset_config(cfg, subset, spec.iterations);
        scfg.validate()?;
        for &seed in &cfg.seeds {
            let outcome = run_evolution(&scfg, seed, None)?;
            if let Some(err) = &outcome.log.error {
                return Err(HarnessError::Runtime(format!(
                    "ablation run {}/{seed} aborted: {err}",
                    subset.name
                )));
            }
            let report = outcome
                .log
                .reports
                .last()
                .cloned()
                .ok_or_else(|| HarnessError::Runtime("ablation run produced no report".into()))?;
            let stats = collect_data_stats(&scfg, &outcome.proposer, seed)?;
            rows.push(AblationRow { subset: subset.name.clone(), seed, report, stats });
        }
    }
    Ok(rows)
}

fn ablation_metrics_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "subset,seed,r1_03,r1_05,r1_07,miou,f1,pairs,length_mean,length_std,fidelity_length_corr\n",
    );
    for r in rows {
        let rep = &r.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.subset,
            r.seed,
            rep.r1[0].1,
            rep.r1[1].1,
            rep.r1[2].1,
            rep.miou,
            rep.f1,
            r.stats.pairs,
            r.stats.length_mean,
            r.stats.length_std,
            r.stats.fidelity_length_corr
        );
    }
    out
}

fn ablation_summary_csv(rows: &[AblationRow], subsets: &[String]) -> String {
    let mut out = String::from("subset,mean_miou,mean_f1,mean_length_mean,mean_length_std,mean_fidelity_length_corr\n");
    for name in subsets {
        let group: Vec<&AblationRow> = rows.iter().filter(|r| &r.subset == name).collect();
        let n = group.len() as f64;
        let miou = group.iter().map(|r| r.report.miou).sum::<f64>() / n;
        let f1 = group.iter().map(|r| r.report.f1).sum::<f64>() / n;
        let lm = group.iter().map(|r| r.stats.length_mean).sum::<f64>() / n;
        let ls = group.iter().map(|r| r.stats.length_std).sum::<f64>() / n;
        let fc = group.iter().map(|r| r.stats.fidelity_length_corr).sum::<f64>() / n;
        let _ = writeln!(out, "{name},{miou},{f1},{lm},{ls},{fc}");
    }
    out
}

fn ablation_histogram_csv(rows: &[AblationRow], subsets: &[String]) -> String {
    let mut out = String::from("subset,bin,bin_lo,bin_hi,start_count,end_count\n");
    for name in subsets {
        let group: Vec<&AblationRow> = rows.iter().filter(|r| &r.subset == name).collect();
        for bin in 0..HIST_BINS {
            let lo = bin as f64 / HIST_BINS as f64;
            let hi = (bin + 1) as f64 / HIST_BINS as f64;
            let start: usize = group.iter().map(|r| r.stats.start_hist[bin]).sum();
            let end: usize = group.iter().map(|r| r.stats.end_hist[bin]).sum();
            let _ = writeln!(out, "{name},{bin},{lo},{hi},{start},{end}");
        }
    }
    out
}

/// Run the ablation sweep and write the comparison tables.
pub fn ablate(config_path: &Path, ablation_path: Option<&Path>) -> Result<PathBuf, HarnessError> {
    let cfg = load_config(config_path)?;
    let spec = match ablation_path {
        Some(p) => AblationSpec::load(p)?,
        None => AblationSpec::default(),
    };
    let rows = run_ablation(&cfg, &spec)?;
    let subsets: Vec<String> = spec.subsets.iter().map(|s| s.name.clone()).collect();
    let dir = cfg.output_dir.join("ablation");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("metrics.csv"), ablation_metrics_csv(&rows))?;
    std::fs::write(dir.join("summary.csv"), ablation_summary_csv(&rows, &subsets))?;
    std::fs::write(dir.join("histograms.csv"), ablation_histogram_csv(&rows, &subsets))?;
    let mut text = String::from("seed-averaged held-out mIoU per subset\n");
    for line in ablation_summary_csv(&rows, &subsets).lines().skip(1) {
        let mut parts = line.split(',');
        let name = parts.next().unwrap_or("");
        let miou: f64 = parts.next().unwrap_or("0").parse().unwrap_or(0.0);
        let _ = writeln!(text, "  {name:<10} {miou:.2}");
    }
    std::fs::write(dir.join("summary.txt"), text)?;
    println!("ablation tables in {}", dir.display());
    Ok(dir)
}

/// Rebuild the reward-dynamics table from a run's step log.
pub fn report(run_dir: &Path) -> Result<PathBuf, HarnessError> {
    let steps_path = run_dir.join("steps.jsonl");
    if !steps_path.exists() {
        return Err(HarnessError::Usage(format!("{} has no steps.jsonl", run_dir.display())));
    }
    let steps = read_steps(&steps_path).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let mut csv = String::from("iteration,step,stage,channel,mean_reward,mean_advantage\n");
    for r in &steps {
        for (channel, value) in &r.channel_means {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.iteration,
                r.step,
                r.stage.name(),
                channel,
                value,
                r.mean_advantage
            );
        }
    }
    let out = run_dir.join("reward_dynamics.csv");
    std::fs::write(&out, &csv)?;

    let mut text = String::new();
    let iterations: BTreeSet<usize> = steps.iter().map(|r| r.iteration).collect();
    for &it in &iterations {
        for stage in [Stage::Proposer, Stage::Solver] {
            let stage_steps: Vec<_> = steps.iter().filter(|r| r.iteration == it && r.stage == stage).collect();
            if stage_steps.is_empty() {
                continue;
            }
            let mut channels: Vec<String> = Vec::new();
            for r in &stage_steps {
                for (c, _) in &r.channel_means {
                    if !channels.contains(c) {
                        channels.push(c.clone());
                    }
                }
            }
            let _ = write!(text, "iteration {it} {}:", stage.name());
            for c in &channels {
                let vals: Vec<f64> = stage_steps.iter().filter_map(|r| r.channel_mean(c)).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let _ = write!(text, " {c} {mean:.3}");
            }
            text.push('\n');
        }
    }
    std::fs::write(run_dir.join("summary.txt"), text)?;
    println!("report written to {}", out.display());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        assert!((pearson(&x, &y) - 1.0).abs() < 1e-12);
        let inv = [8.0, 6.0, 4.0, 2.0];
        assert!((pearson(&x, &inv) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[5.0, 5.0, 5.0, 5.0]), 0.0);
    }
}
