mod common;

use std::path::Path;

use common::{envelope, surfel, surfel_ok, tiny_run_config, write_config};
use surfel_workbench::config::RunConfig;

fn code(out: &std::process::Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Drops the first line starting with `key` from a TOML file.
fn drop_key(path: &Path, key: &str) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut dropped = false;
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| {
            let hit = !dropped && l.trim_start().starts_with(&format!("{key} ="));
            dropped |= hit;
            !hit
        })
        .collect();
    assert!(dropped, "no {key} in config");
    std::fs::write(path, kept.join("\n")).unwrap();
}

#[test]
fn default_config_prints_a_loadable_toml() {
    let dir = tempfile::tempdir().unwrap();
    let text = surfel_ok(&dir.path().join("unused.toml"), &["default-config"], None);
    let path = dir.path().join("run.toml");
    std::fs::write(&path, &text).unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.bench.n_train, 16);
    assert_eq!(cfg.data.train, dir.path().join("bench/train"));
    let mut want = RunConfig::benchmark_default();
    want.resolve_paths(dir.path());
    assert_eq!(cfg.to_toml().unwrap(), want.to_toml().unwrap());
}

#[test]
fn missing_or_unknown_config_keys_exit_with_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(&tiny_run_config(), dir.path());
    drop_key(&path, "seed");
    let out = surfel(&path, &["init"], None);
    assert_eq!(code(&out), 2);
    let env = envelope(&out);
    assert_eq!(env["code"], 2);
    assert!(env["message"].as_str().unwrap().contains("seed"), "{env}");
    assert!(env["error"].is_string());

    let path = write_config(&tiny_run_config(), dir.path());
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("bogus_knob = 3\n{text}")).unwrap();
    let out = surfel(&path, &["init"], None);
    assert_eq!(code(&out), 2);
    assert!(envelope(&out)["message"].as_str().unwrap().contains("bogus_knob"));

    let out = surfel(&dir.path().join("absent.toml"), &["init"], None);
    assert_eq!(code(&out), 3);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(&tiny_run_config(), dir.path());
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_surfel"))
        .arg("--config")
        .arg(&path)
        .arg("init")
        .env("SURFEL_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(envelope(&out)["message"].as_str().unwrap().contains("SURFEL_THREADS"));
}

#[test]
fn truncated_dataset_exits_with_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(&tiny_run_config(), dir.path());
    surfel_ok(&path, &["make-bench"], Some(1));
    let json = dir.path().join("bench/corpus/id0/dataset.json");
    let text = std::fs::read_to_string(&json).unwrap();
    std::fs::write(&json, &text[..text.len() / 3]).unwrap();
    let out = surfel(&path, &["train-prior"], Some(1));
    assert_eq!(code(&out), 4);
    let env = envelope(&out);
    assert_eq!(env["code"], 4);
    assert!(env["message"].as_str().unwrap().contains("dataset.json"), "{env}");
}

#[test]
fn a_held_lock_exits_with_a_lock_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(&tiny_run_config(), dir.path());
    surfel_ok(&path, &["make-bench"], Some(1));
    std::fs::create_dir_all(dir.path().join("run")).unwrap();
    std::fs::write(dir.path().join("run/.surfel.lock"), "1").unwrap();
    let out = surfel(&path, &["train-prior"], Some(1));
    assert_eq!(code(&out), 9);
    assert_eq!(envelope(&out)["code"], 9);
    // nothing was written behind the lock
    assert!(!dir.path().join("run/prior.mgpw").exists());
}

#[test]
fn stages_out_of_order_report_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(&tiny_run_config(), dir.path());
    surfel_ok(&path, &["make-bench"], Some(1));
    let out = surfel(&path, &["adapt1"], Some(1));
    assert_eq!(code(&out), 3);
}

#[test]
fn tiny_pipeline_runs_end_to_end_and_evals_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::tiny_pipeline(dir.path(), Some(2), &[]);
    let run = dir.path().join("run");
    for artifact in [
        "prior.mgpw",
        "stats.json",
        "init.gmap",
        "stage1.mgpw",
        "stage1.gmap",
        "stage2.mgpw",
        "stage2.gmap",
        "eval_stage1_heldout.csv",
        "eval_stage2_heldout.csv",
    ] {
        assert!(run.join(artifact).is_file(), "missing {artifact}");
    }
    assert!(!run.join(".surfel.lock").exists());
    let first = std::fs::read(run.join("eval_stage2_heldout.csv")).unwrap();
    let stdout = surfel_ok(&path, &["eval", "--weights", "stage2", "--split", "heldout"], Some(2));
    assert!(stdout.contains("psnr"), "{stdout}");
    assert_eq!(std::fs::read(run.join("eval_stage2_heldout.csv")).unwrap(), first);

    let rendered = surfel_ok(&path, &["render", "--weights", "stage1", "--split", "train"], Some(2));
    assert!(Path::new(rendered.trim()).is_dir(), "{rendered}");
    let ply = surfel_ok(&path, &["export-ply", "--weights", "stage2"], Some(2));
    let bytes = std::fs::read(ply.trim()).unwrap();
    assert!(bytes.starts_with(b"ply\n"));
    let anim = surfel_ok(&path, &["animate", "--weights", "stage2", "--split", "heldout"], Some(2));
    assert!(Path::new(anim.trim()).exists(), "{anim}");
}
