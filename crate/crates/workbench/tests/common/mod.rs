#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use surfel_core::fixture::tiny_prior_config;
use surfel_workbench::bench::{make_synthetic_benchmark, write_benchmark, BenchConfig, Benchmark};
use surfel_workbench::config::RunConfig;

pub const TINY_EXPR: usize = 6;

/// A benchmark small enough to generate in well under a second.
pub fn tiny_bench_config() -> BenchConfig {
    BenchConfig {
        resolution: 32,
        uv_size: 16,
        texture_size: 32,
        n_train: 3,
        n_heldout: 2,
        corpus_identities: 2,
        corpus_views: 2,
        expr_dim: TINY_EXPR,
        prior: tiny_prior_config(TINY_EXPR),
        base_fit_steps: 20,
        ..BenchConfig::default()
    }
}

pub fn tiny_bench(seed: u64, root: &Path) -> Benchmark {
    let bench = make_synthetic_benchmark(seed, &tiny_bench_config()).unwrap();
    write_benchmark(&bench, root).unwrap();
    bench
}

/// Every stage runs a handful of steps on the tiny benchmark.
pub fn tiny_run_config() -> RunConfig {
    let mut cfg = RunConfig::benchmark_default();
    let bench = tiny_bench_config();
    cfg.data.corpus = (0..bench.corpus_identities)
        .map(|k| cfg.data.bench_dir.join(format!("corpus/id{k}")))
        .collect();
    cfg.data.uv_size = bench.uv_size;
    cfg.prior = bench.prior.clone();
    cfg.bench = bench;
    cfg.prior_training.warm_start_steps = 10;
    cfg.prior_training.train.steps = 4;
    cfg.adaptation.n_real = 2;
    cfg.adaptation.n_gen = 3;
    cfg.adaptation.stage1_steps = 4;
    cfg.adaptation.stage2_steps = 4;
    cfg
}

pub fn write_config(cfg: &RunConfig, dir: &Path) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

pub fn surfel(config: &Path, args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_surfel"));
    cmd.arg("--config").arg(config).args(args).env("RUST_LOG", "warn");
    match threads {
        Some(n) => cmd.env("SURFEL_THREADS", n.to_string()),
        None => cmd.env_remove("SURFEL_THREADS"),
    };
    cmd.output().unwrap()
}

/// Runs one subcommand and fails the test with its stderr if it exits nonzero.
pub fn surfel_ok(config: &Path, args: &[&str], threads: Option<usize>) -> String {
    let out = surfel(config, args, threads);
    assert!(
        out.status.success(),
        "surfel {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn envelope(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no envelope in {stderr}"));
    serde_json::from_str(line).unwrap()
}

/// Stage order of a full run, ending with the held-out evaluations.
pub const PIPELINE: &[&[&str]] = &[
    &["make-bench"],
    &["train-prior"],
    &["init"],
    &["adapt1"],
    &["gen-supervision"],
    &["adapt2"],
    &["eval", "--weights", "stage1", "--split", "heldout"],
    &["eval", "--weights", "stage2", "--split", "heldout"],
];

/// Runs every stage of the tiny config in `dir` and returns the config path.
pub fn tiny_pipeline(dir: &Path, threads: Option<usize>, extra: &[&str]) -> PathBuf {
    let config = write_config(&tiny_run_config(), dir);
    for stage in PIPELINE {
        let args: Vec<&str> = extra.iter().chain(stage.iter()).copied().collect();
        surfel_ok(&config, &args, threads);
    }
    config
}

/// Every regular file under `root`, relative, sorted, with its bytes.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
