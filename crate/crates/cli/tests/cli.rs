#![allow(clippy::needless_range_loop, clippy::field_reassign_with_default)]

use std::path::Path;
use std::process::{Command, Output};

use trackadapt_core::config::RunConfig;
use trackadapt_core::physics::Range;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trackadapt"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    let o = bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(
        o.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    for k in &mut c.dataset.kinds {
        k.count = 2;
    }
    c.dataset.duration = Range { lo: 2.5, hi: 3.0 };
    for ppo in [&mut c.specialist.ppo, &mut c.adapt.ppo] {
        ppo.num_envs = 4;
        ppo.horizon = 16;
        ppo.minibatch = 32;
        ppo.epochs = 1;
    }
    c.specialist.budget_steps = 128;
    c.specialist.eval_every = 1;
    c.distill.iterations = 1;
    c.distill.states_per_iteration = 256;
    c.distill.num_envs = 4;
    c.distill.epochs = 1;
    c.adapt.budget_steps = 128;
    c.adapt.eval_every = 1;
    c.adapt.value_warmup = 1;
    c.adapt.wm_batch = 4;
    c.adapt.wm_minibatches = 1;
    c.adapt.heldout_envs = 2;
    c.adapt.heldout_steps = 130;
    c.adapt.heldout_windows = 4;
    c.eval.seeds = vec![0];
    c.eval.validation_seeds = vec![1000];
    c.eval.validation_clips_per_cluster = 1;
    c
}

#[test]
fn tiny_budget_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, tiny_config().to_json().unwrap()).unwrap();
    let out = dir.path().join("out");

    run(&["gen-motions"], &cfg, &out);
    assert!(out.join("gen-motions.config.json").exists());
    run(&["train-specialists"], &cfg, &out);
    run(&["distill"], &cfg, &out);
    assert!(out.join("generalist.ckpt").exists());
    run(&["train-adapter"], &cfg, &out);
    run(&["train-adapter", "--baseline"], &cfg, &out);
    assert!(out.join("adapter.ckpt").exists());
    assert!(out.join("baseline_dr.ckpt").exists());

    let generalist = out.join("generalist.ckpt");
    let o = run(
        &["eval", "--bundle", generalist.to_str().unwrap(), "--scenario", "terrains"],
        &cfg,
        &out,
    );
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("terrains: SR"));

    let o = run(&["report"], &cfg, &out);
    let csv = String::from_utf8_lossy(&o.stdout).into_owned();
    for label in ["frozen_base", "ppo_dr", "adapter"] {
        assert!(csv.contains(label), "{csv}");
    }
    assert!(out.join("reports/comparison.svg").exists());

    // The snapshot records overrides from the command line.
    let snap: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.config.json")).unwrap()).unwrap();
    assert_eq!(snap["out_dir"], out.to_str().unwrap());
}

#[test]
fn unknown_subcommand_fails() {
    let o = bin().arg("fly").output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"specialist": {"ppo": {"gamma": 1.5}}}"#).unwrap();
    let o = bin()
        .args(["gen-motions", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("gamma") && err.contains("bad.json"), "{err}");
}

#[test]
fn missing_stage_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["distill", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("gen-motions"));
}
