//! Student-driven DAgger with full aggregation.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bank::{dagger_label, SpecialistBank};
use crate::error::{Error, Result};
use crate::motions::MotionClip;
use crate::netcore::MlpGrad;
use crate::physics::DisturbanceRanges;
use crate::tracker::{Actor, Policy, TaskSpec, VecEnv, POLICY_HIDDEN};

const DATASET_MAGIC: &[u8; 4] = b"DAGR";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub iterations: usize,
    pub states_per_iteration: usize,
    pub num_envs: usize,
    /// Passes over the aggregated data after each collection.
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub validation_fraction: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            iterations: 10,
            states_per_iteration: 50_000,
            num_envs: 64,
            epochs: 4,
            minibatch: 512,
            lr: 1e-3,
            max_grad_norm: 1.0,
            validation_fraction: 0.1,
            hidden: POLICY_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_envs == 0 || self.minibatch == 0 || self.hidden.is_empty() {
            return Err(Error::config("distillation needs environments, a minibatch and hidden layers"));
        }
        if !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::config("distillation lr and max_grad_norm must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Labeled states: policy inputs, teacher means and the clip each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DaggerDataset {
    pub input_dim: usize,
    pub action_dim: usize,
    pub inputs: Vec<f32>,
    pub labels: Vec<f32>,
    pub clips: Vec<u32>,
}

impl DaggerDataset {
    pub fn new(input_dim: usize, action_dim: usize) -> Self {
        DaggerDataset {
            input_dim,
            action_dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn push(&mut self, input: &[f32], label: &[f32], clip: usize) {
        self.inputs.extend_from_slice(input);
        self.labels.extend_from_slice(label);
        self.clips.push(clip as u32);
    }

    fn rows(&self, idx: &[usize]) -> (Vec<f32>, Vec<f32>) {
        let (id, ad) = (self.input_dim, self.action_dim);
        let mut x = Vec::with_capacity(idx.len() * id);
        let mut y = Vec::with_capacity(idx.len() * ad);
        for &r in idx {
            x.extend_from_slice(&self.inputs[r * id..(r + 1) * id]);
            y.extend_from_slice(&self.labels[r * ad..(r + 1) * ad]);
        }
        (x, y)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(28 + 4 * (self.inputs.len() + self.labels.len() + self.clips.len()));
        b.extend_from_slice(DATASET_MAGIC);
        b.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        for v in [self.input_dim, self.action_dim, self.len()] {
            b.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for v in self.inputs.iter().chain(&self.labels) {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for c in &self.clips {
            b.extend_from_slice(&c.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptData {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(corrupt("truncated"));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(4)? != DATASET_MAGIC {
            return Err(corrupt("bad magic"));
        }
        if u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) != DATASET_VERSION {
            return Err(corrupt("unsupported version"));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        }
        let [id, ad, n] = dims;
        let floats = n
            .checked_mul(id + ad)
            .filter(|&f| f.checked_mul(4).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| corrupt("sizes exceed file"))?;
        let data = take(floats * 4)?;
        let vals: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let clips: Vec<u32> = take(n * 4)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if !r.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        let (inputs, labels) = vals.split_at(n * id);
        Ok(DaggerDataset {
            input_dim: id,
            action_dim: ad,
            inputs: inputs.to_vec(),
            labels: labels.to_vec(),
            clips,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Mean squared error between `policy` means and the labels, per action element.
pub fn action_mse(policy: &Policy, data: &DaggerDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(4096) {
        let (x, y) = data.rows(chunk);
        let m = policy.means(&x, chunk.len())?;
        sum += m.iter().zip(&y).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum::<f64>();
    }
    Ok(sum / (data.len() * data.action_dim) as f64)
}

/// One shuffled pass of mean-squared regression; returns the mean minibatch loss.
pub fn regress_epoch<R: Rng + ?Sized>(
    policy: &mut Policy,
    data: &DaggerDataset,
    minibatch: usize,
    max_grad_norm: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let ad = data.action_dim;
    let (mut sum, mut count) = (0.0, 0.0);
    for chunk in order.chunks(minibatch.max(1)) {
        let (x, y) = data.rows(chunk);
        let (m, cache) = policy.net.forward(&x, chunk.len())?;
        let scale = 1.0 / (chunk.len() * ad) as f32;
        let mut loss = 0.0;
        let dy: Vec<f32> = m
            .iter()
            .zip(&y)
            .map(|(&a, &b)| {
                loss += ((a - b) as f64).powi(2);
                2.0 * (a - b) * scale
            })
            .collect();
        let mut g = MlpGrad::zeros_like(&policy.net);
        policy.net.backward_accumulate(&cache, &dy, &mut g, false)?;
        let keep = policy.head.log_std.clone();
        match policy.update(g, vec![0.0; ad], max_grad_norm) {
            Ok(_) => {}
            Err(Error::Optimizer(msg)) => {
                log::warn!("distillation step skipped: {msg}");
                continue;
            }
            Err(e) => return Err(e),
        }
        policy.head.log_std = keep;
        sum += loss * scale as f64;
        count += 1.0;
    }
    Ok(if count > 0.0 { sum / count } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillRow {
    pub iteration: usize,
    pub teacher_driven: bool,
    pub dataset_size: usize,
    pub epoch_losses: Vec<f64>,
    pub validation_mse: f64,
    pub sr: f64,
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    /// Student with the best validation success rate.
    pub policy: Policy,
    pub best_sr: f64,
    pub best_iteration: usize,
    /// Validation MSE of the untrained student.
    pub baseline_mse: f64,
    pub rows: Vec<DistillRow>,
    pub dataset: DaggerDataset,
    pub validation: DaggerDataset,
}

fn gather_states(
    envs: &mut VecEnv,
    bank: &SpecialistBank,
    driver: Option<&Policy>,
    count: usize,
) -> Result<DaggerDataset> {
    let (id, ad) = (bank.input_dim(), bank.action_dim());
    let mut data = DaggerDataset::new(id, ad);
    let n = envs.len();
    while data.len() < count {
        let (p, _) = envs.inputs(false)?;
        let clips: Vec<usize> = envs.envs.iter().map(|e| e.clip).collect();
        let labels = dagger_label(bank, &p, &clips)?;
        let acts = match driver {
            Some(s) => s.means(&p, n)?,
            None => labels.clone(),
        };
        for i in 0..n.min(count - data.len()) {
            data.push(&p[i * id..(i + 1) * id], &labels[i * ad..(i + 1) * ad], clips[i]);
        }
        envs.step_all(&acts)?;
    }
    Ok(data)
}

fn split_validation<R: Rng + ?Sized>(
    data: DaggerDataset,
    fraction: f64,
    train: &mut DaggerDataset,
    val: &mut DaggerDataset,
    rng: &mut R,
) {
    let (id, ad) = (data.input_dim, data.action_dim);
    for r in 0..data.len() {
        let dst = if rng.gen::<f64>() < fraction { &mut *val } else { &mut *train };
        dst.push(
            &data.inputs[r * id..(r + 1) * id],
            &data.labels[r * ad..(r + 1) * ad],
            data.clips[r] as usize,
        );
    }
}

/// Distils `bank` into one policy over all `clips` under nominal dynamics.
///
/// The first collection is driven by the specialists, later ones by the
/// student. `evaluate` scores a student; the best one is returned.
pub fn train_generalist(
    task: &TaskSpec,
    clips: Vec<MotionClip>,
    bank: &SpecialistBank,
    config: &DistillConfig,
    evaluate: &dyn Fn(&Policy) -> Result<f64>,
) -> Result<DistillOutcome> {
    config.validate()?;
    if bank.assignments.len() != clips.len() {
        return Err(Error::config(format!(
            "bank covers {} clips, dataset has {}",
            bank.assignments.len(),
            clips.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd1571);
    let mut student = Policy::new(bank.input_dim(), &config.hidden, bank.action_dim(), config.lr, &mut rng);
    student.head.log_std = bank.mean_log_std();
    let mut envs = VecEnv::new(task.clone(), clips, DisturbanceRanges::none(), config.num_envs, 0, config.seed)?;
    let (id, ad) = (bank.input_dim(), bank.action_dim());
    let mut dataset = DaggerDataset::new(id, ad);
    let anchor = ((config.states_per_iteration as f64 * config.validation_fraction).ceil() as usize).max(config.num_envs);
    let mut validation = gather_states(&mut envs, bank, None, anchor)?;
    let baseline_mse = action_mse(&student, &validation)?;
    let mut best = (evaluate(&student)?, 0usize, student.clone());
    log::info!("distillation start: validation MSE {baseline_mse:.5}, SR {:.1}", best.0);
    let mut rows = Vec::new();
    for iteration in 1..=config.iterations {
        let teacher_driven = iteration == 1;
        let driver = (!teacher_driven).then_some(&student);
        let fresh = gather_states(&mut envs, bank, driver, config.states_per_iteration)?;
        split_validation(fresh, config.validation_fraction, &mut dataset, &mut validation, &mut rng);
        let epoch_losses = (0..config.epochs)
            .map(|_| regress_epoch(&mut student, &dataset, config.minibatch, config.max_grad_norm, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let validation_mse = action_mse(&student, &validation)?;
        let sr = evaluate(&student)?;
        if sr >= best.0 {
            best = (sr, iteration, student.clone());
        }
        log::info!(
            "distillation iteration {iteration}: {} states, validation MSE {validation_mse:.5}, SR {sr:.1}",
            dataset.len()
        );
        rows.push(DistillRow {
            iteration,
            teacher_driven,
            dataset_size: dataset.len(),
            epoch_losses,
            validation_mse,
            sr,
        });
    }
    Ok(DistillOutcome {
        policy: best.2,
        best_sr: best.0,
        best_iteration: best.1,
        baseline_mse,
        rows,
        dataset,
        validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motions::{generate_clip, MotionKind, MotionParams};
    use crate::physics::RobotModel;
    use crate::tracker::features::policy_input_len;

    fn setup() -> (TaskSpec, Vec<MotionClip>, SpecialistBank) {
        let task = TaskSpec::new(RobotModel::planar_biped());
        let clip = generate_clip(&task.model, MotionKind::Stand, &MotionParams::zero(), 2.0, 50.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut teacher = Policy::new(policy_input_len(&task.model), &[16], 6, 1e-3, &mut rng);
        teacher.head.log_std = vec![-1.5; 6];
        let bank = SpecialistBank::new(vec![teacher], vec![0]).unwrap();
        (task, vec![clip], bank)
    }

    #[test]
    fn zero_iterations_return_untrained_student() {
        let (task, clips, bank) = setup();
        let config = DistillConfig {
            iterations: 0,
            states_per_iteration: 200,
            num_envs: 4,
            hidden: vec![16],
            ..Default::default()
        };
        let out = train_generalist(&task, clips, &bank, &config, &|_| Ok(50.0)).unwrap();
        assert_eq!(out.best_iteration, 0);
        assert!(out.rows.is_empty());
        assert!(out.baseline_mse > 0.0);
        assert_eq!(out.policy.head.log_std, vec![-1.5; 6]);
        assert!((action_mse(&out.policy, &out.validation).unwrap() - out.baseline_mse).abs() < 1e-12);
    }

    #[test]
    fn regression_lowers_validation_error() {
        let (task, clips, bank) = setup();
        let config = DistillConfig {
            iterations: 3,
            states_per_iteration: 1000,
            num_envs: 8,
            epochs: 10,
            minibatch: 128,
            hidden: vec![32],
            ..Default::default()
        };
        let out = train_generalist(&task, clips, &bank, &config, &|_| Ok(0.0)).unwrap();
        let last = out.rows.last().unwrap();
        assert!(last.validation_mse < 0.2 * out.baseline_mse, "{} vs {}", last.validation_mse, out.baseline_mse);
        assert!(out.rows[0].teacher_driven && !out.rows[1].teacher_driven);
        assert!(out.rows.windows(2).all(|w| w[1].dataset_size > w[0].dataset_size));
        assert_eq!(out.policy.head.log_std, vec![-1.5; 6]);
    }

    #[test]
    fn dataset_round_trip_and_corruption() {
        let mut d = DaggerDataset::new(2, 1);
        d.push(&[1.0, 2.0], &[0.5], 3);
        d.push(&[-1.0, 0.0], &[0.25], 0);
        let bytes = d.to_bytes();
        let p = Path::new("mem");
        assert_eq!(DaggerDataset::from_bytes(&bytes, p).unwrap(), d);
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(DaggerDataset::from_bytes(&bytes[..cut], p).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(DaggerDataset::from_bytes(&extra, p).is_err());
    }
}
