//! End-to-end tests of the `groundloop` binary: exit codes, file artifacts,
//! schema contracts, determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use groundloop::evolution::save_params;
use groundloop::policies::SolverParams;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_groundloop"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let out_dir = dir.join("out");
    let text = format!(
        r#"
seeds = [11, 12]
output_dir = "{}"

[world]
videos = 24
seed = 5

[training]
bootstrap_resamples = 200
baseline_reps = 30

{extra}

[[schedule.iterations]]
delta = 0.0
channels = ["format"]
steps_proposer = 10
steps_solver = 10
[schedule.iterations.weights]
format = 1.0

[[schedule.iterations]]
delta = 0.3
channels = ["format", "consistency", "feedback"]
steps_proposer = 10
steps_solver = 10
[schedule.iterations.weights]
format = 0.5
consistency = 0.5
feedback = 1.0
"#,
        out_dir.display(),
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = run(&["validate", "--config", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["gen-corpus", "--config", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_accepts_good_and_rejects_bad() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    assert_eq!(run(&["validate", "--config", cfg.to_str().unwrap()]).status.code(), Some(0));

    // Decreasing delta violates the curriculum invariant.
    let bad = std::fs::read_to_string(&cfg).unwrap().replace("delta = 0.3", "delta = -0.5");
    let bad_path = tmp.path().join("bad.toml");
    std::fs::write(&bad_path, bad).unwrap();
    let out = run(&["validate", "--config", bad_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_corpus_is_reproducible_and_counted() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let corpus_a = tmp.path().join("a.jsonl");
    let corpus_b = tmp.path().join("b.jsonl");
    for (path, _) in [(&corpus_a, 0), (&corpus_b, 1)] {
        let out = run(&["gen-corpus", "--config", cfg.to_str().unwrap(), "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(&corpus_a).unwrap();
    let b = std::fs::read(&corpus_b).unwrap();
    assert_eq!(a, b, "same config must produce identical corpora");
    let sha_a = std::fs::read_to_string(corpus_a.with_extension("jsonl.sha256")).unwrap();
    let sha_b = std::fs::read_to_string(corpus_b.with_extension("jsonl.sha256")).unwrap();
    assert_eq!(sha_a, sha_b);
    // Header line plus one record per video.
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 25);
}

#[test]
fn train_writes_run_dir_and_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let run_a = tmp.path().join("run-a");
    let run_b = tmp.path().join("run-b");
    for dir in [&run_a, &run_b] {
        let out = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "11",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        for artifact in ["config.toml", "steps.jsonl", "final_report.csv", "summary.json", "params/final_solver.json"] {
            assert!(dir.join(artifact).exists(), "missing {artifact}");
        }
    }
    assert_eq!(
        std::fs::read(run_a.join("final_report.csv")).unwrap(),
        std::fs::read(run_b.join("final_report.csv")).unwrap(),
        "rerun with the same seed must yield identical final metrics"
    );
    assert_eq!(
        std::fs::read(run_a.join("steps.jsonl")).unwrap(),
        std::fs::read(run_b.join("steps.jsonl")).unwrap()
    );
}

#[test]
fn algorithms_produce_distinct_advantage_traces() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let mut traces = Vec::new();
    for alg in ["gdpo", "grpo"] {
        let dir = tmp.path().join(alg);
        let out = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "11",
            "--algorithm",
            alg,
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let steps = groundloop::evolution::read_steps(&dir.join("steps.jsonl")).unwrap();
        let trace: Vec<f64> = steps
            .iter()
            .filter(|r| r.stage == groundloop::evolution::Stage::Proposer)
            .map(|r| r.mean_abs_advantage)
            .collect();
        traces.push(trace);
    }
    assert_ne!(traces[0], traces[1], "decoupled and summed advantages must differ on the same seed");
}

#[test]
fn train_iterations_flag_truncates() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let dir = tmp.path().join("short");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--iterations",
        "1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.join("eval_iter01.csv").exists());
    assert!(!dir.join("eval_iter02.csv").exists());
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--iterations", "9"]);
    assert_eq!(out.status.code(), Some(2), "out-of-range iteration count is a usage error");
}

#[test]
fn eval_greedy_limit_params_scores_perfect_recall() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let corpus_path = tmp.path().join("corpus.jsonl");
    assert_eq!(
        run(&["gen-corpus", "--config", cfg.to_str().unwrap(), "--out", corpus_path.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    // Hand-built run dir holding greedy-limit solver parameters.
    let run_dir = tmp.path().join("greedy-run");
    std::fs::create_dir_all(run_dir.join("params")).unwrap();
    std::fs::copy(&cfg, run_dir.join("config.toml")).unwrap();
    let greedy = SolverParams { scan_temperature_log: -30.0, boundary_log_std: -30.0 };
    save_params(&run_dir.join("params/final_solver.json"), "solver", &greedy).unwrap();

    let out1 = run(&["eval", "--run-dir", run_dir.to_str().unwrap(), "--corpus", corpus_path.to_str().unwrap()]);
    assert_eq!(out1.status.code(), Some(0), "{}", String::from_utf8_lossy(&out1.stderr));
    let csv1 = std::fs::read(run_dir.join("eval_external.csv")).unwrap();
    let out2 = run(&["eval", "--run-dir", run_dir.to_str().unwrap(), "--corpus", corpus_path.to_str().unwrap()]);
    assert_eq!(out2.status.code(), Some(0));
    let csv2 = std::fs::read(run_dir.join("eval_external.csv")).unwrap();
    assert_eq!(csv1, csv2, "eval twice must produce identical CSV bytes");

    let text = String::from_utf8(csv1).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("metric,estimate,ci_low,ci_high"));
    let r1_07 = text
        .lines()
        .find(|l| l.starts_with("R1@0.7,"))
        .expect("R1@0.7 row");
    let estimate: f64 = r1_07.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(estimate, 100.0);
}

#[test]
fn report_emits_pinned_schema_and_dominance() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let dir = tmp.path().join("run");
    assert_eq!(
        run(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]).status.code(),
        Some(0)
    );
    let out = run(&["report", "--run-dir", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.join("reward_dynamics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iteration,step,stage,channel,mean_reward,mean_advantage"));

    // Row-wise: conditioned format never exceeds the unconditioned value.
    use std::collections::BTreeMap;
    let mut fmt: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    let mut uncond: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 6, "bad row: {line}");
        let key = (cols[0].to_string(), cols[1].to_string(), cols[2].to_string());
        let value: f64 = cols[4].parse().unwrap();
        match cols[3] {
            "format" => {
                fmt.insert(key, value);
            }
            "format_uncond" => {
                uncond.insert(key, value);
            }
            _ => {}
        }
    }
    assert!(!fmt.is_empty());
    for (key, cond) in &fmt {
        let u = uncond.get(key).expect("both channels logged");
        assert!(cond <= u, "{key:?}: conditioned {cond} > unconditioned {u}");
    }
    assert!(dir.join("summary.txt").exists());
}

#[test]
fn ablation_histograms_account_for_every_pair() {
    let tmp = TempDir::new().unwrap();
    // Tiny two-subset sweep to keep the walltime low.
    let cfg = small_config(tmp.path(), "");
    let spec_path = tmp.path().join("ablation.toml");
    std::fs::write(
        &spec_path,
        r#"
iterations = 2
[[subsets]]
name = "fmt"
channels = ["format"]
[[subsets]]
name = "all"
channels = ["format", "consistency", "feedback"]
"#,
    )
    .unwrap();
    let out = run(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--ablation",
        spec_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("out/ablation");
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let hist = std::fs::read_to_string(dir.join("histograms.csv")).unwrap();
    assert!(dir.join("summary.csv").exists() && dir.join("summary.txt").exists());

    // Total pairs per subset from metrics.csv equals the histogram mass.
    for subset in ["fmt", "all"] {
        let pairs: usize = metrics
            .lines()
            .skip(1)
            .filter(|l| l.starts_with(&format!("{subset},")))
            .map(|l| l.split(',').nth(7).unwrap().parse::<usize>().unwrap())
            .sum();
        let start_mass: usize = hist
            .lines()
            .skip(1)
            .filter(|l| l.starts_with(&format!("{subset},")))
            .map(|l| l.split(',').nth(4).unwrap().parse::<usize>().unwrap())
            .sum();
        let end_mass: usize = hist
            .lines()
            .skip(1)
            .filter(|l| l.starts_with(&format!("{subset},")))
            .map(|l| l.split(',').nth(5).unwrap().parse::<usize>().unwrap())
            .sum();
        assert!(pairs > 0);
        assert_eq!(start_mass, pairs, "start histogram mass for {subset}");
        assert_eq!(end_mass, pairs, "end histogram mass for {subset}");
    }
}

#[test]
fn aborted_run_exits_one_with_partial_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "[optimizer]\nlr = 1e300");
    let dir = tmp.path().join("boom");
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("partial artifacts"));
    assert!(dir.join("steps.jsonl").exists());
    assert!(dir.join("summary.json").exists());
    assert!(dir.join("params/init_proposer.json").exists());
}

#[test]
fn usage_errors_exit_two() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "clap rejects unknown subcommands with 2");
    let out = run(&["report", "--run-dir", "/nonexistent"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["eval", "--run-dir", "/nonexistent", "--corpus", "/nonexistent.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}
