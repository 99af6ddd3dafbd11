//! Versioned run configuration covering every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::AdaptConfig;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::eval::ScenarioName;
use crate::motions::DatasetSpec;
use crate::physics::{DisturbanceRanges, RobotModel};
use crate::tracker::{RewardSigmas, RewardWeights, TaskSpec, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub scenarios: Vec<ScenarioName>,
    /// Seeds of the reported evaluation.
    pub seeds: Vec<u64>,
    /// Seeds used for checkpoint selection during training.
    pub validation_seeds: Vec<u64>,
    /// Clips per cluster used for checkpoint selection; 0 means all.
    pub validation_clips_per_cluster: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scenarios: ScenarioName::ALL.to_vec(),
            seeds: (0..5).collect(),
            validation_seeds: vec![1000, 1001],
            validation_clips_per_cluster: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Robot description; the built-in planar biped when absent.
    pub robot: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub reward_weights: RewardWeights,
    pub reward_sigmas: RewardSigmas,
    pub specialist: TrainConfig,
    pub distill: DistillConfig,
    pub adapt: AdaptConfig,
    pub ranges: DisturbanceRanges,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            robot: None,
            dataset: DatasetSpec::default(),
            reward_weights: RewardWeights::default(),
            reward_sigmas: RewardSigmas::default(),
            specialist: TrainConfig::default(),
            distill: DistillConfig::default(),
            adapt: AdaptConfig::default(),
            ranges: DisturbanceRanges::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn section<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{name}: {msg}")),
        other => other,
    })
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "version: expected {CONFIG_VERSION}, found {}",
                self.version
            )));
        }
        section("dataset", self.dataset.validate())?;
        section("reward_weights", self.reward_weights.validate())?;
        section("reward_sigmas", self.reward_sigmas.validate())?;
        section("specialist", self.specialist.validate())?;
        section("distill", self.distill.validate())?;
        section("adapt", self.adapt.validate())?;
        section("ranges", self.ranges.validate())?;
        if self.eval.seeds.is_empty() || self.eval.validation_seeds.is_empty() || self.eval.scenarios.is_empty() {
            return Err(Error::config("eval: scenarios, seeds and validation_seeds must be non-empty"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn task(&self) -> Result<TaskSpec> {
        let model = match &self.robot {
            Some(p) => RobotModel::load(p)?,
            None => RobotModel::planar_biped(),
        };
        Ok(TaskSpec {
            model,
            weights: self.reward_weights.clone(),
            sigmas: self.reward_sigmas.clone(),
        })
    }

    /// Hash of everything the stage-one artifacts depend on.
    pub fn stage1_hash(&self) -> Result<String> {
        let parts = serde_json::to_string(&(
            self.version,
            self.seed,
            &self.robot,
            &self.dataset,
            &self.reward_weights,
            &self.reward_sigmas,
            &self.specialist,
            &self.distill,
        ))?;
        let digest = Sha256::digest(parts.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}

/// Reads and validates a configuration file; errors name the file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn bad_gamma_names_the_field() {
        let err = RunConfig::from_json(r#"{"specialist": {"ppo": {"gamma": 1.5}}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("specialist") && msg.contains("gamma"), "{msg}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sead": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"adapt": {"wm_lr": 1e-3, "bogus": 1}}"#).is_err());
    }

    #[test]
    fn inverted_range_is_rejected() {
        let err = RunConfig::from_json(r#"{"ranges": {"floor_friction": {"lo": 2.0, "hi": 0.3}}}"#).unwrap_err();
        assert!(err.to_string().contains("floor_friction"), "{err}");
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig { seed: 17, ..Default::default() };
        c.adapt.world_model = false;
        c.eval.seeds = vec![4, 5];
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.stage1_hash().unwrap(), c.stage1_hash().unwrap());
        c.adapt.budget_steps += 1;
        assert_eq!(back.stage1_hash().unwrap(), c.stage1_hash().unwrap());
        c.distill.iterations += 1;
        assert_ne!(back.stage1_hash().unwrap(), c.stage1_hash().unwrap());
    }
}
