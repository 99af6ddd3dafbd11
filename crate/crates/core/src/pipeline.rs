//! Stage orchestration and artifact layout under one output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::{train_adapter, AdaptConfig, AdaptOutcome, AdapterPolicy};
use crate::config::RunConfig;
use crate::distill::{specialist_path, train_generalist, DistillOutcome, SpecialistBank};
use crate::error::{Error, Result};
use crate::eval::{run_scenario, write_report, write_text, Comparison, EvalScenario, MetricsReport, ScenarioName};
use crate::motions::{build_dataset, MotionClip, MotionDataset};
use crate::netcore::ParamSet;
use crate::physics::DisturbanceRanges;
use crate::tracker::{
    fresh_networks, nominal_sr, train_policy, train_specialist, Actor, Policy, TaskSpec, TrainConfig, TrainOutcome,
};

/// A checkpoint that can be evaluated: a plain tracker or an adapted one.
#[derive(Debug, Clone)]
pub enum Bundle {
    Base(Policy),
    Adapted(AdapterPolicy),
}

impl Bundle {
    pub fn from_params(set: &ParamSet) -> Result<Self> {
        if set.meta::<usize>("adapter.layers").is_ok() {
            Ok(Bundle::Adapted(AdapterPolicy::import(set)?))
        } else {
            Ok(Bundle::Base(Policy::import(set)?))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(&ParamSet::load(path)?)
    }

    pub fn base(&self) -> &Policy {
        match self {
            Bundle::Base(p) => p,
            Bundle::Adapted(a) => &a.base,
        }
    }

    pub fn run_scenario(&self, task: &TaskSpec, clips: &[MotionClip], scenario: &EvalScenario) -> Result<MetricsReport> {
        match self {
            Bundle::Base(p) => run_scenario(p, task, clips, scenario),
            Bundle::Adapted(a) => run_scenario(a, task, clips, scenario),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistSummary {
    pub cluster: usize,
    pub clips: usize,
    pub majority_kind: Option<String>,
    pub best_sr: f64,
    pub best_iteration: usize,
    pub env_steps: usize,
    /// Environment steps until evaluation first reached the best score.
    pub steps_to_best: usize,
}

fn steps_to_best(out: &TrainOutcome) -> usize {
    out.curve
        .iter()
        .find(|r| r.iteration == out.best_iteration)
        .map_or(0, |r| r.env_steps)
}

pub struct Pipeline {
    pub config: RunConfig,
    pub task: TaskSpec,
    pub out: PathBuf,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let task = config.task()?;
        let out = config.out_dir.clone();
        Ok(Pipeline { config, task, out })
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }

    pub fn specialist_dir(&self) -> PathBuf {
        self.out.join("specialists")
    }

    pub fn generalist_path(&self) -> PathBuf {
        self.out.join("generalist.ckpt")
    }

    pub fn adapter_path(&self) -> PathBuf {
        self.out.join("adapter.ckpt")
    }

    pub fn baseline_path(&self) -> PathBuf {
        self.out.join("baseline_dr.ckpt")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    /// Writes the resolved configuration next to the outputs of `command`.
    pub fn write_snapshot(&self, command: &str) -> Result<PathBuf> {
        let path = self.out.join(format!("{command}.config.json"));
        write_text(&path, &self.config.to_json()?)?;
        Ok(path)
    }

    pub fn gen_motions(&self) -> Result<MotionDataset> {
        let ds = build_dataset(&self.task.model, &self.config.dataset, self.config.seed)?;
        ds.save(&self.dataset_dir(), true)?;
        // Frames are stored in single precision; later stages always see the stored copy.
        MotionDataset::load(&self.dataset_dir())
    }

    pub fn load_dataset(&self) -> Result<MotionDataset> {
        let ds = MotionDataset::load(&self.dataset_dir())?;
        if ds.spec != self.config.dataset || ds.seed != self.config.seed {
            return Err(Error::config(format!(
                "dataset in {} was generated from a different configuration",
                self.dataset_dir().display()
            )));
        }
        Ok(ds)
    }

    /// First `validation_clips_per_cluster` clips of every cluster.
    pub fn validation_clips(&self, ds: &MotionDataset) -> Vec<usize> {
        let per = self.config.eval.validation_clips_per_cluster;
        let mut v: Vec<usize> = (0..ds.k)
            .flat_map(|c| {
                let idx = ds.cluster_clips(c);
                let n = if per == 0 { idx.len() } else { per.min(idx.len()) };
                idx.into_iter().take(n)
            })
            .collect();
        v.sort_unstable();
        v
    }

    /// Nominal success rate on the clips of one cluster.
    pub fn cluster_sr<A: Actor>(&self, actor: &A, ds: &MotionDataset, cluster: usize) -> Result<f64> {
        let scenario = EvalScenario::new(
            ScenarioName::NoDisturbance,
            &DisturbanceRanges::none(),
            ds.cluster_clips(cluster),
            vec![0],
        );
        Ok(run_scenario(actor, &self.task, &ds.clips, &scenario)?.sr)
    }

    pub fn train_specialist(&self, ds: &MotionDataset, cluster: usize) -> Result<TrainOutcome> {
        let cfg = TrainConfig {
            seed: self.config.seed ^ self.config.specialist.seed,
            ..self.config.specialist.clone()
        };
        let out = train_specialist(&self.task, cluster, ds, &cfg)?;
        let dir = self.specialist_dir();
        let mut set = out.to_params()?;
        set.set_meta("stage1_hash", self.config.stage1_hash()?)?;
        set.save(&specialist_path(&dir, cluster))?;
        write_text(&dir.join(format!("specialist_{cluster}_curve.csv")), &crate::tracker::curve_csv(&out.curve))?;
        Ok(out)
    }

    pub fn train_specialists(&self, ds: &MotionDataset) -> Result<(SpecialistBank, Vec<SpecialistSummary>)> {
        let mut policies = Vec::with_capacity(ds.k);
        let mut summary = Vec::with_capacity(ds.k);
        for c in 0..ds.k {
            let out = self.train_specialist(ds, c)?;
            log::info!("specialist {c}: SR {:.1} after {} steps", out.best_sr, out.env_steps);
            summary.push(SpecialistSummary {
                cluster: c,
                clips: ds.cluster_clips(c).len(),
                majority_kind: ds.majority_kind(c).map(|k| k.name().to_string()),
                best_sr: out.best_sr,
                best_iteration: out.best_iteration,
                env_steps: out.env_steps,
                steps_to_best: steps_to_best(&out),
            });
            policies.push(out.policy);
        }
        write_text(
            &self.specialist_dir().join("summary.json"),
            &(serde_json::to_string_pretty(&summary)? + "\n"),
        )?;
        Ok((SpecialistBank::new(policies, ds.assignments.clone())?, summary))
    }

    pub fn load_bank(&self, ds: &MotionDataset) -> Result<SpecialistBank> {
        let hash = self.config.stage1_hash()?;
        for c in 0..ds.k {
            let set = ParamSet::load(&specialist_path(&self.specialist_dir(), c))?;
            self.check_stage1(&set, &format!("specialist {c}"), &hash)?;
        }
        SpecialistBank::load(&self.specialist_dir(), ds.assignments.clone())
    }

    fn check_stage1(&self, set: &ParamSet, what: &str, hash: &str) -> Result<()> {
        let found: String = set.meta("stage1_hash").unwrap_or_default();
        if found != hash {
            return Err(Error::config(format!(
                "{what} was trained under stage-one configuration {found:?}, current is {hash:?}"
            )));
        }
        Ok(())
    }

    pub fn distill(&self, ds: &MotionDataset, bank: &SpecialistBank) -> Result<DistillOutcome> {
        let val = self.validation_clips(ds);
        let eval = |p: &Policy| {
            let scenario = EvalScenario::new(ScenarioName::NoDisturbance, &DisturbanceRanges::none(), val.clone(), vec![0]);
            Ok(run_scenario(p, &self.task, &ds.clips, &scenario)?.sr)
        };
        let cfg = crate::distill::DistillConfig {
            seed: self.config.seed ^ self.config.distill.seed,
            ..self.config.distill.clone()
        };
        let out = train_generalist(&self.task, ds.clips.clone(), bank, &cfg, &eval)?;
        let mut set = ParamSet::new();
        out.policy.export(&mut set)?;
        set.set_meta("stage1_hash", self.config.stage1_hash()?)?;
        set.set_meta("baseline_mse", out.baseline_mse)?;
        set.save(&self.generalist_path())?;
        write_text(
            &self.out.join("distill_history.json"),
            &(serde_json::to_string_pretty(&out.rows)? + "\n"),
        )?;
        out.dataset.save(&self.out.join("dagger_dataset.bin"))?;
        Ok(out)
    }

    pub fn load_generalist(&self) -> Result<Policy> {
        let set = ParamSet::load(&self.generalist_path())?;
        self.check_stage1(&set, "generalist", &self.config.stage1_hash()?)?;
        Policy::import(&set)
    }

    fn validation_scenarios(&self, ds: &MotionDataset) -> Vec<EvalScenario> {
        let clips = self.validation_clips(ds);
        ScenarioName::DISTURBED
            .iter()
            .map(|&n| EvalScenario::new(n, &self.config.ranges, clips.clone(), self.config.eval.validation_seeds.clone()))
            .collect()
    }

    /// Mean success rate over the disturbed families on validation clips and seeds.
    pub fn disturbed_validation_sr<A: Actor>(&self, actor: &A, ds: &MotionDataset) -> Result<f64> {
        let scenarios = self.validation_scenarios(ds);
        let mut sum = 0.0;
        for s in &scenarios {
            sum += run_scenario(actor, &self.task, &ds.clips, s)?.sr;
        }
        Ok(sum / scenarios.len() as f64)
    }

    fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            seed: self.config.seed ^ self.config.adapt.seed,
            ..self.config.adapt.clone()
        }
    }

    pub fn train_adapter(&self, ds: &MotionDataset, base: Policy) -> Result<AdaptOutcome> {
        let cfg = self.adapt_config();
        let eval = |a: &AdapterPolicy| self.disturbed_validation_sr(a, ds);
        let out = train_adapter(&self.task, ds.clips.clone(), self.config.ranges.clone(), base, &cfg, &eval)?;
        out.save(&self.out, "adapter")?;
        Ok(out)
    }

    /// Plain PPO fine-tuning of `base` under the same randomization and budget.
    pub fn train_baseline(&self, ds: &MotionDataset, base: Policy) -> Result<TrainOutcome> {
        let a = self.adapt_config();
        let cfg = TrainConfig {
            ppo: a.ppo,
            budget_steps: a.budget_steps,
            eval_every: a.eval_every,
            stop_at_sr: None,
            value_warmup: a.value_warmup,
            critic_hidden: a.critic_hidden.clone(),
            seed: a.seed,
            ..self.config.specialist.clone()
        };
        let (_, critic) = fresh_networks(&self.task, &cfg);
        let policy = base.with_fresh_optimizer(a.ppo.lr);
        let eval = |p: &Policy| self.disturbed_validation_sr(p, ds);
        let out = train_policy(&self.task, ds.clips.clone(), self.config.ranges.clone(), policy, critic, &cfg, &eval)?;
        out.save(&self.out, "baseline_dr")?;
        Ok(out)
    }

    /// Reported evaluation of `bundle` on one scenario over every clip.
    pub fn evaluate(&self, bundle: &Bundle, scenario: ScenarioName, ds: &MotionDataset) -> Result<MetricsReport> {
        let s = EvalScenario::new(
            scenario,
            &self.config.ranges,
            (0..ds.clips.len()).collect(),
            self.config.eval.seeds.clone(),
        );
        bundle.run_scenario(&self.task, &ds.clips, &s)
    }

    pub fn evaluate_and_write(
        &self,
        bundle: &Bundle,
        stem: &str,
        scenario: ScenarioName,
        ds: &MotionDataset,
    ) -> Result<MetricsReport> {
        let report = self.evaluate(bundle, scenario, ds)?;
        write_report(&report, &self.reports_dir(), &format!("{stem}_{scenario}"))?;
        Ok(report)
    }

    /// Every available checkpoint on every configured scenario, plus a comparison table.
    pub fn report(&self, ds: &MotionDataset) -> Result<Comparison> {
        let names: Vec<String> = self.config.eval.scenarios.iter().map(|s| s.to_string()).collect();
        let mut cmp = Comparison::new(names);
        for (label, path) in [
            ("frozen_base", self.generalist_path()),
            ("ppo_dr", self.baseline_path()),
            ("adapter", self.adapter_path()),
        ] {
            if !path.exists() {
                log::info!("skipping {label}: {} not found", path.display());
                continue;
            }
            let bundle = Bundle::load(&path)?;
            let reports = self
                .config
                .eval
                .scenarios
                .iter()
                .map(|&s| self.evaluate_and_write(&bundle, label, s, ds))
                .collect::<Result<Vec<_>>>()?;
            cmp.add(label, &reports)?;
        }
        if cmp.methods.is_empty() {
            return Err(Error::config(format!("no checkpoints under {}", self.out.display())));
        }
        write_text(&self.reports_dir().join("comparison.csv"), &cmp.to_csv())?;
        write_text(&self.reports_dir().join("comparison.svg"), &cmp.to_svg())?;
        Ok(cmp)
    }
}

/// Nominal success rate of `policy` on every cluster of `ds`.
pub fn per_cluster_sr(task: &TaskSpec, policy: &Policy, ds: &MotionDataset) -> Result<Vec<f64>> {
    (0..ds.k)
        .map(|c| {
            let clips: Vec<MotionClip> = ds.cluster_clips(c).into_iter().map(|i| ds.clips[i].clone()).collect();
            nominal_sr(policy, task, &clips)
        })
        .collect()
}
