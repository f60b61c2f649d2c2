//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! The loop-dynamics criteria share a lazily computed set of training runs
//! under the default desk configuration (5 seeds, both advantage schemes,
//! and the four-channel ablation sweep). Everything is seeded, so the suite
//! is deterministic end to end.

use std::time::{Duration, Instant};

use groundloop::config::HarnessConfig;
use groundloop::evolution::{run_evolution, RunOutcome, Stage};
use groundloop::metrics::{bootstrap_ci, iou, tiou};
use groundloop::moment::Moment;
use groundloop::optimizer::{
    gdpo_batch_normalize, gdpo_channel_advantages, gdpo_combine, grpo_advantages, ChannelWeights,
    RewardMatrix, ADVANTAGE_EPSILON,
};
use groundloop::parsing::{parse_proposer, render_proposer, QueryMoment};
use groundloop::policies::{
    proposer_log_prob, proposer_sample, solver_log_prob, solver_sample, ProposerParams, SolverParams,
};
use groundloop::rewards::{frame_count, intra_consistency, proposer_format_reward, ConsistencyConfig, ProposerSample};
use groundloop::rng::substream;
use groundloop::synthworld::{gen_corpus, WorldConfig};
use once_cell::sync::Lazy;
use rand::Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Pilot {
    /// Default config (all rewards, decoupled advantages), one run per seed.
    default_runs: Vec<RunOutcome>,
    /// Wall-clock for the five default runs.
    default_elapsed: Duration,
    /// Same config with summed-reward advantages.
    grpo_runs: Vec<RunOutcome>,
    /// Ablation rows for the canonical four subsets.
    ablation: Vec<groundloop_cli::commands::AblationRow>,
}

static PILOT: Lazy<Pilot> = Lazy::new(|| {
    let cfg = HarnessConfig::default();
    let t0 = Instant::now();
    let default_runs: Vec<RunOutcome> = SEEDS
        .iter()
        .map(|&s| run_evolution(&cfg, s, None).expect("default run"))
        .collect();
    let default_elapsed = t0.elapsed();
    for r in &default_runs {
        assert!(!r.failed(), "default run failed: {:?}", r.log.error);
    }
    let mut grpo_cfg = cfg.clone();
    grpo_cfg.optimizer.algorithm = groundloop::optimizer::Algorithm::Grpo;
    let grpo_runs = SEEDS
        .iter()
        .map(|&s| run_evolution(&grpo_cfg, s, None).expect("grpo run"))
        .collect();
    let ablation = groundloop_cli::commands::run_ablation(&cfg, &groundloop_cli::ablation::AblationSpec::default())
        .expect("ablation sweep");
    Pilot { default_runs, default_elapsed, grpo_runs, ablation }
});

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Independent sweep-line oracle: walk the sorted endpoints and accumulate
/// elementary-segment measures by midpoint membership.
fn sweep_iou_oracle(m: (f64, f64), p: (f64, f64)) -> f64 {
    let mut points = vec![m.0, m.1, p.0, p.1];
    points.sort_by(|a, b| a.total_cmp(b));
    let mut inter = 0.0;
    let mut union = 0.0;
    for w in points.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let in_m = mid >= m.0 && mid < m.1;
        let in_p = mid >= p.0 && mid < p.1;
        if in_m && in_p {
            inter += len;
        }
        if in_m || in_p {
            union += len;
        }
    }
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn sweep_tiou_oracle(m: (f64, f64), p: (f64, f64), duration: f64) -> f64 {
    let base = sweep_iou_oracle(m, p);
    let fs = 1.0 - (m.0 - p.0).abs() / duration;
    let fe = 1.0 - (m.1 - p.1).abs() / duration;
    if fs < 0.0 || fe < 0.0 {
        return 0.0;
    }
    base * fs * fe
}

#[test]
fn acceptance_01_metric_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = substream(101, "acc1", &[]);
    for trial in 0..10_000 {
        let duration = rng.gen_range(10.0..200.0);
        let gs = rng.gen_range(0.0..duration * 0.9);
        let ge = gs + rng.gen_range(0.01..duration - gs);
        let ps = rng.gen_range(-0.1 * duration..duration);
        let pe = ps + rng.gen_range(0.0..duration);
        let m = Moment::new(gs, ge);
        let p = Moment::new(ps, pe);
        let i = iou(&m, &p).unwrap();
        let t = tiou(&m, &p, duration).unwrap();
        let oi = sweep_iou_oracle((gs, ge), (ps, pe));
        let ot = sweep_tiou_oracle((gs, ge), (ps, pe), duration);
        assert!((i - oi).abs() < 1e-6, "trial {trial}: iou {i} vs oracle {oi}");
        assert!((t - ot).abs() < 1e-6, "trial {trial}: tiou {t} vs oracle {ot}");
        assert!(t <= i + 1e-12, "trial {trial}: tiou {t} > iou {i}");
        assert_eq!(tiou(&m, &m, duration).unwrap(), 1.0, "trial {trial}: self tiou");
    }
    let elapsed = t0.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!("[acceptance] criterion 1 PASS: iou/tiou match the sweep oracle on 10k triples in {elapsed:?}");
}

#[test]
fn acceptance_02_paper_constants() {
    // Alternating +-1 similarities: sigma = 1, exp(-30) ~ 9.3e-14.
    let v = intra_consistency(&[1.0, -1.0, 1.0, -1.0], 30.0);
    assert!((9.2e-14..=9.4e-14).contains(&v), "sigma=1 gamma=30 gave {v}");
    // Perfect alignment: sigma = 0 maps to exactly one.
    assert_eq!(intra_consistency(&[0.5; 8], 30.0), 1.0);
    // Frame-count clips at the configured 8/32 bounds.
    let cfg = ConsistencyConfig::default();
    assert_eq!(frame_count(&Moment::new(0.0, 5.0), &cfg), 8);
    assert_eq!(frame_count(&Moment::new(0.0, 100.0), &cfg), 32);
    assert_eq!(frame_count(&Moment::new(0.0, 20.0), &cfg), 20);
    println!("[acceptance] criterion 2 PASS: intra-consistency and frame-count constants check out");
}

#[test]
fn acceptance_03_format_reward_fidelity() {
    // The one-valid-pair-of-four padding case scores exactly 0.25.
    let pairs = vec![QueryMoment { query: "whole video".into(), moment: Moment::new(0.0, 30.0) }];
    let output = parse_proposer(&render_proposer(&pairs), 4);
    let sample = ProposerSample { output, predictions: vec![Moment::ZERO; 4], video_duration: 30.0 };
    assert_eq!(proposer_format_reward(&sample, 3.0, 0.0), 0.25);

    // Threshold zero equals the plain validity fraction, bit for bit, on
    // fuzzed samples (independent evaluator below).
    let mut rng = substream(103, "acc3", &[]);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=6);
        let duration = rng.gen_range(10.0..120.0);
        let k = rng.gen_range(0..=n);
        let pairs: Vec<QueryMoment> = (0..k)
            .map(|i| {
                let s = rng.gen_range(-5.0..duration);
                let e = s + rng.gen_range(-2.0..30.0);
                QueryMoment { query: format!("q{i}"), moment: Moment::new(s, e) }
            })
            .collect();
        let output = parse_proposer(&render_proposer(&pairs), n);
        let sample = ProposerSample { output, predictions: vec![Moment::ZERO; n], video_duration: duration };
        let got = proposer_format_reward(&sample, 3.0, 0.0);
        let expected = if !sample.output.template_ok {
            0.0
        } else {
            let valid = sample
                .output
                .pairs
                .iter()
                .filter(|p| p.moment.start >= 0.0 && p.moment.end <= duration && p.moment.end - p.moment.start > 3.0)
                .count();
            valid as f64 / n as f64
        };
        assert_eq!(got, expected);
    }
    println!("[acceptance] criterion 3 PASS: padding example is 0.25 and the threshold-zero reward equals the plain formula exactly");
}

#[test]
fn acceptance_04_advantage_properties() {
    let t0 = Instant::now();
    let mut rng = substream(104, "acc4", &[]);
    for trial in 0..1000 {
        let g = rng.gen_range(2..9);
        let k = rng.gen_range(1..5);
        let rows: Vec<Vec<f64>> = (0..g).map(|_| (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let m = RewardMatrix::new(trial, rows.clone()).unwrap();
        let adv = gdpo_channel_advantages(&m).unwrap();
        for c in 0..k {
            let col: Vec<f64> = (0..g).map(|r| adv[r][c]).collect();
            let cm = mean(col.iter().copied());
            assert!(cm.abs() <= 1e-9, "trial {trial}: channel mean {cm}");
            let raw = m.channel_column(c);
            let rm = mean(raw.iter().copied());
            let rstd = (raw.iter().map(|v| (v - rm).powi(2)).sum::<f64>() / g as f64).sqrt();
            if rstd > ADVANTAGE_EPSILON {
                let std = (col.iter().map(|v| (v - cm).powi(2)).sum::<f64>() / g as f64).sqrt();
                assert!((std - 1.0).abs() <= 1e-6, "trial {trial}: channel std {std}");
            }
        }
        // Batch-normalized output is centered.
        let w = ChannelWeights::new(vec![1.0; k]).unwrap();
        let combined = gdpo_combine(&adv, &w).unwrap();
        let final_adv = gdpo_batch_normalize(&[combined]).unwrap();
        let fm = mean(final_adv[0].iter().copied());
        assert!(fm.abs() <= 1e-9, "trial {trial}: batch mean {fm}");

        // Positive-affine invariance, exact on a dyadic grid: rewards are
        // multiples of 1/8, scales are powers of two, shifts are integers,
        // and the group size is a power of two so the mean division commutes
        // with the transform bit for bit.
        let dg = [2usize, 4, 8][rng.gen_range(0..3)];
        let dy_rows: Vec<Vec<f64>> =
            (0..dg).map(|_| (0..k).map(|_| rng.gen_range(-16..17) as f64 / 8.0).collect()).collect();
        let dm = RewardMatrix::new(trial, dy_rows.clone()).unwrap();
        let base = gdpo_channel_advantages(&dm).unwrap();
        let chan = rng.gen_range(0..k);
        let a = [0.5, 2.0, 4.0][rng.gen_range(0..3)];
        let b = rng.gen_range(-4..5) as f64;
        let transformed: Vec<Vec<f64>> = dy_rows
            .iter()
            .map(|row| {
                row.iter().enumerate().map(|(c, &v)| if c == chan { a * v + b } else { v }).collect()
            })
            .collect();
        let tm = RewardMatrix::new(trial, transformed).unwrap();
        let t_adv = gdpo_channel_advantages(&tm).unwrap();
        assert_eq!(base, t_adv, "trial {trial}: affine invariance a={a} b={b}");

        // Single-channel decoupled advantages equal the summed-reward ones.
        let col: Vec<f64> = (0..g).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let single = RewardMatrix::new(trial, col.iter().map(|&v| vec![v]).collect()).unwrap();
        let lhs: Vec<f64> = gdpo_channel_advantages(&single).unwrap().into_iter().map(|r| r[0]).collect();
        assert_eq!(lhs, grpo_advantages(&col).unwrap(), "trial {trial}: K=1 equality");
    }
    let elapsed = t0.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!("[acceptance] criterion 4 PASS: advantage normalization properties hold on 1000 matrices in {elapsed:?}");
}

#[test]
fn acceptance_05_gradient_correctness() {
    let corpus = gen_corpus(&WorldConfig { videos: 8, seed: 33, ..WorldConfig::default() }).unwrap();
    let mut rng = substream(105, "acc5", &[]);
    let step = 1e-5;
    let check = |analytic: &[f64], eval: &mut dyn FnMut(usize, f64) -> f64, what: &str| {
        for i in 0..analytic.len() {
            let fd = (eval(i, step) - eval(i, -step)) / (2.0 * step);
            let a = analytic[i];
            let tol = 1e-4 * a.abs().max(fd.abs()).max(1e-3);
            assert!((a - fd).abs() <= tol, "{what}[{i}]: analytic {a} vs fd {fd}");
        }
    };
    for trial in 0..100 {
        let video = &corpus[trial % corpus.len()];
        let params = ProposerParams {
            anchor_logits: (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            boundary_log_std: rng.gen_range(-1.0..1.5),
            query_fidelity_logit: rng.gen_range(-1.5..1.5),
        };
        let r = proposer_sample(video, &params, 4, &mut rng);
        let base = params.to_vec();
        check(
            &r.score_gradient,
            &mut |i, h| {
                let mut v = base.clone();
                v[i] += h;
                proposer_log_prob(video, &ProposerParams::from_vec(&v, 8).unwrap(), &r.actions)
            },
            "proposer",
        );

        let sparams = SolverParams {
            scan_temperature_log: rng.gen_range(-1.0..1.0),
            boundary_log_std: rng.gen_range(-1.0..1.5),
        };
        let q = &video.events[trial % video.events.len()].latent;
        let sr = solver_sample(video, q, &sparams, &mut rng);
        let sbase = sparams.to_vec();
        check(
            &sr.score_gradient,
            &mut |i, h| {
                let mut v = sbase.clone();
                v[i] += h;
                solver_log_prob(video, q, &SolverParams::from_vec(&v).unwrap(), &sr.actions)
            },
            "solver",
        );
    }
    println!("[acceptance] criterion 5 PASS: score gradients match central finite differences on 100 settings per policy");
}

fn channel_mean_over(run: &RunOutcome, iteration: usize, stage: Stage, channel: &str) -> Vec<f64> {
    run.log
        .steps
        .iter()
        .filter(|r| r.iteration == iteration && r.stage == stage)
        .filter_map(|r| r.channel_mean(channel))
        .collect()
}

#[test]
fn acceptance_06_loop_dynamics() {
    let pilot = &*PILOT;
    let budget = Duration::from_secs(300);
    assert!(
        pilot.default_elapsed < budget,
        "five default runs took {:?}, budget {budget:?}",
        pilot.default_elapsed
    );

    // (a) Format reward saturates by the end of the warm-up iteration.
    let fmt_end = mean(pilot.default_runs.iter().map(|run| {
        let v = channel_mean_over(run, 1, Stage::Proposer, "format");
        mean(v[v.len() - 10..].iter().copied())
    }));
    assert!(fmt_end >= 0.95, "iteration-1 format mean {fmt_end}");

    // (b) Conditioned format never exceeds the unconditioned value, at
    // every logged step of every run.
    for run in &pilot.default_runs {
        for rec in run.log.steps.iter().filter(|r| r.stage == Stage::Proposer) {
            let cond = rec.channel_mean("format").unwrap();
            let uncond = rec.channel_mean("format_uncond").unwrap();
            assert!(cond <= uncond, "seq {}: {cond} > {uncond}", rec.seq);
        }
    }

    // (c) Feedback improves from iteration 2 to iteration 3.
    let fb2 = mean(pilot.default_runs.iter().map(|r| mean(channel_mean_over(r, 2, Stage::Proposer, "feedback"))));
    let fb3 = mean(pilot.default_runs.iter().map(|r| mean(channel_mean_over(r, 3, Stage::Proposer, "feedback"))));
    assert!(fb3 >= fb2, "feedback iteration 3 ({fb3}) < iteration 2 ({fb2})");

    // (d) Final held-out mIoU beats both the untrained solver and the
    // random-interval oracle.
    let final_miou = mean(pilot.default_runs.iter().map(|r| r.miou_at_iteration(3).unwrap()));
    let untrained = mean(pilot.default_runs.iter().map(|r| r.untrained.miou));
    let random = mean(pilot.default_runs.iter().map(|r| r.random_baseline_miou));
    assert!(final_miou > untrained, "final {final_miou} <= untrained {untrained}");
    assert!(final_miou > random, "final {final_miou} <= random {random}");

    println!(
        "[acceptance] criterion 6 PASS: fmt(end of iter 1) {fmt_end:.3}, feedback {fb2:.3}->{fb3:.3}, \
         mIoU {final_miou:.2} vs untrained {untrained:.2} and random {random:.2}, {:?} for 5 runs",
        pilot.default_elapsed
    );
}

#[test]
fn acceptance_07_decoupled_vs_summed_advantages() {
    let pilot = &*PILOT;
    let gdpo2 = mean(pilot.default_runs.iter().map(|r| r.miou_at_iteration(2).unwrap()));
    let grpo2 = mean(pilot.grpo_runs.iter().map(|r| r.miou_at_iteration(2).unwrap()));
    assert!(
        gdpo2 >= grpo2,
        "decoupled iteration-2 mIoU {gdpo2} below summed {grpo2}"
    );
    println!("[acceptance] criterion 7 PASS: iteration-2 mIoU decoupled {gdpo2:.2} >= summed {grpo2:.2}");
}

#[test]
fn acceptance_08_ablation_direction() {
    let pilot = &*PILOT;
    let subset_mean = |name: &str, f: &dyn Fn(&groundloop_cli::commands::AblationRow) -> f64| {
        mean(pilot.ablation.iter().filter(|r| r.subset == name).map(f))
    };
    let names = ["fmt", "fmt+con", "fmt+feed", "all"];
    let mious: Vec<(String, f64)> = names
        .iter()
        .map(|&n| (n.to_string(), subset_mean(n, &|r| r.report.miou)))
        .collect();
    let fmt_miou = mious[0].1;
    let all_miou = mious[3].1;
    for (name, v) in &mious[1..] {
        assert!(fmt_miou < *v, "format-only ({fmt_miou}) not lowest: {name} = {v}");
    }
    for (name, v) in &mious[..3] {
        assert!(all_miou > *v, "all-rewards ({all_miou}) not highest: {name} = {v}");
    }

    let fmt_std = subset_mean("fmt", &|r| r.stats.length_std);
    for name in ["fmt+con", "all"] {
        let s = subset_mean(name, &|r| r.stats.length_std);
        assert!(
            s < fmt_std,
            "consistency-including {name} length std {s} not below format-only {fmt_std}"
        );
    }
    println!(
        "[acceptance] criterion 8 PASS: mIoU order {:?}, length std fmt {fmt_std:.3} > con-including",
        mious.iter().map(|(n, v)| format!("{n}={v:.2}")).collect::<Vec<_>>()
    );
}

#[test]
fn acceptance_09_statistics() {
    // Degenerate bootstrap collapses to the constant.
    let constant = vec![4.25; 40];
    assert_eq!(bootstrap_ci(&constant, 1000, 7).unwrap(), (4.25, 4.25));

    // Interval width tracks the analytic standard error within 20%.
    use rand_distr::StandardNormal;
    for (n, seed) in [(100usize, 901u64), (1000, 902)] {
        let mut rng = substream(seed, "acc9", &[]);
        let vals: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (lo, hi) = bootstrap_ci(&vals, 1000, seed).unwrap();
        let width = hi - lo;
        let expected = 2.0 * 1.96 / (n as f64).sqrt();
        let rel = (width - expected).abs() / expected;
        assert!(rel < 0.2, "n={n}: width {width} vs analytic {expected} (rel {rel:.3})");
    }

    // Recall monotone in threshold on every emitted report.
    let pilot = &*PILOT;
    let all_reports = pilot
        .default_runs
        .iter()
        .chain(&pilot.grpo_runs)
        .flat_map(|r| r.log.reports.iter().chain(std::iter::once(&r.untrained)))
        .chain(pilot.ablation.iter().map(|row| &row.report));
    let mut count = 0;
    for rep in all_reports {
        for w in rep.r1.windows(2) {
            assert!(w[0].1 >= w[1].1, "recall not monotone: {:?}", rep.r1);
        }
        count += 1;
    }
    assert!(count >= 40, "expected a broad report sample, got {count}");
    println!("[acceptance] criterion 9 PASS: degenerate CI, width tracking, recall monotone on {count} reports");
}

#[test]
fn acceptance_10_cli_determinism() {
    let tmp = tempfile::TempDir::new().unwrap();
    let out_dir = tmp.path().join("out");
    let config = format!(
        r#"
seeds = [3]
output_dir = "{}"

[world]
videos = 40

[training]
bootstrap_resamples = 300
baseline_reps = 50

[[schedule.iterations]]
delta = 0.0
channels = ["format"]
steps_proposer = 40
steps_solver = 40
[schedule.iterations.weights]
format = 1.0

[[schedule.iterations]]
delta = 0.3
channels = ["format", "consistency", "feedback"]
steps_proposer = 40
steps_solver = 40
[schedule.iterations.weights]
format = 0.5
consistency = 0.5
feedback = 1.0
"#,
        out_dir.display()
    );
    let cfg_path = tmp.path().join("config.toml");
    std::fs::write(&cfg_path, config).unwrap();
    let mut reports = Vec::new();
    for name in ["first", "second"] {
        let dir = tmp.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_groundloop"))
            .args([
                "train",
                "--config",
                cfg_path.to_str().unwrap(),
                "--seed",
                "3",
                "--out",
                dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
        reports.push(std::fs::read(dir.join("final_report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1], "final report CSVs must be byte-identical");
    println!("[acceptance] criterion 10 PASS: identical config+seed trains to byte-identical final reports");
}
