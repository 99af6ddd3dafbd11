#![allow(clippy::needless_range_loop, clippy::field_reassign_with_default)]

use trackadapt_core::config::RunConfig;
use trackadapt_core::eval::{report_json, ScenarioName};
use trackadapt_core::pipeline::{Bundle, Pipeline};

fn tiny(dir: &std::path::Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.out_dir = dir.to_path_buf();
    for k in &mut c.dataset.kinds {
        k.count = 2;
    }
    c.specialist.ppo.num_envs = 4;
    c.specialist.ppo.horizon = 16;
    c.specialist.ppo.minibatch = 32;
    c.specialist.budget_steps = 64;
    c.specialist.eval_every = 1;
    c.distill.iterations = 1;
    c.distill.states_per_iteration = 200;
    c.distill.num_envs = 4;
    c.eval.seeds = vec![0, 1];
    c.eval.validation_seeds = vec![1000];
    c.eval.validation_clips_per_cluster = 1;
    c
}

#[test]
fn stage_one_artifacts_are_tied_to_their_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(dir.path())).unwrap();
    let ds = p.gen_motions().unwrap();
    assert_eq!(ds.k, 6);
    assert_eq!(p.load_dataset().unwrap(), ds);
    let (bank, summary) = p.train_specialists(&ds).unwrap();
    assert_eq!(summary.len(), 6);
    assert_eq!(bank.len(), 6);
    assert_eq!(p.load_bank(&ds).unwrap().len(), 6);
    p.distill(&ds, &bank).unwrap();
    p.load_generalist().unwrap();

    // Same directory, different specialist settings: the saved artifacts no longer match.
    let mut other = tiny(dir.path());
    other.specialist.ppo.lr *= 2.0;
    let q = Pipeline::new(other).unwrap();
    assert!(q.load_bank(&ds).is_err());
    assert!(q.load_generalist().is_err());

    let mut reseeded = tiny(dir.path());
    reseeded.seed = 5;
    assert!(Pipeline::new(reseeded).unwrap().load_dataset().is_err());
}

#[test]
fn evaluation_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(dir.path())).unwrap();
    let ds = p.gen_motions().unwrap();
    let (bank, _) = p.train_specialists(&ds).unwrap();
    p.distill(&ds, &bank).unwrap();
    let b = Bundle::load(&p.generalist_path()).unwrap();
    let run = |p: &Pipeline| report_json(&p.evaluate(&b, ScenarioName::ExternalForces, &ds).unwrap()).unwrap();
    let first = run(&p);
    assert_eq!(first, run(&p));

    let mut c = tiny(dir.path());
    c.eval.seeds = vec![7, 8];
    let other = Pipeline::new(c).unwrap();
    assert_ne!(first, run(&other));
}
