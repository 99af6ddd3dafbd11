use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::netcore::ParamSet;
use crate::tracker::{Actor, Policy};

/// One specialist per motion cluster plus the clip → cluster map.
#[derive(Debug, Clone)]
pub struct SpecialistBank {
    pub specialists: Vec<Policy>,
    pub assignments: Vec<usize>,
}

pub fn specialist_path(dir: &Path, cluster: usize) -> PathBuf {
    dir.join(format!("specialist_{cluster}.ckpt"))
}

impl SpecialistBank {
    pub fn new(specialists: Vec<Policy>, assignments: Vec<usize>) -> Result<Self> {
        let bank = SpecialistBank { specialists, assignments };
        bank.validate()?;
        Ok(bank)
    }

    fn validate(&self) -> Result<()> {
        let first = self
            .specialists
            .first()
            .ok_or_else(|| Error::config("specialist bank is empty"))?;
        for (c, p) in self.specialists.iter().enumerate() {
            if p.input_dim() != first.input_dim() || p.action_dim() != first.action_dim() {
                return Err(Error::config(format!("specialist {c} has different input or action sizes")));
            }
        }
        if let Some(&c) = self.assignments.iter().find(|&&c| c >= self.specialists.len()) {
            return Err(Error::config(format!("no specialist for cluster {c}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.specialists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specialists.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.specialists[0].input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.specialists[0].action_dim()
    }

    pub fn cluster_of(&self, clip: usize) -> Result<usize> {
        self.assignments
            .get(clip)
            .copied()
            .ok_or_else(|| Error::config(format!("clip {clip} has no cluster")))
    }

    pub fn specialist_for(&self, clip: usize) -> Result<&Policy> {
        Ok(&self.specialists[self.cluster_of(clip)?])
    }

    /// Element-wise mean of the specialists' log-stds.
    pub fn mean_log_std(&self) -> Vec<f32> {
        let n = self.len() as f32;
        let mut out = vec![0.0; self.action_dim()];
        for p in &self.specialists {
            for (o, v) in out.iter_mut().zip(&p.head.log_std) {
                *o += v / n;
            }
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (c, p) in self.specialists.iter().enumerate() {
            let mut set = ParamSet::new();
            p.export(&mut set)?;
            set.save(&specialist_path(dir, c))?;
        }
        Ok(())
    }

    /// Reads `specialist_<c>.ckpt` for every cluster named in `assignments`.
    pub fn load(dir: &Path, assignments: Vec<usize>) -> Result<Self> {
        let k = assignments.iter().max().map_or(0, |&m| m + 1);
        let specialists = (0..k)
            .map(|c| {
                let path = specialist_path(dir, c);
                if !path.exists() {
                    return Err(Error::config(format!("missing specialist checkpoint {}", path.display())));
                }
                Policy::import(&ParamSet::load(&path)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(specialists, assignments)
    }
}

/// Deterministic teacher labels: the pre-squash mean of the specialist that
/// owns each row's clip. `inputs` holds one policy input per row.
pub fn dagger_label(bank: &SpecialistBank, inputs: &[f32], clip_ids: &[usize]) -> Result<Vec<f32>> {
    let (id, ad) = (bank.input_dim(), bank.action_dim());
    let rows = clip_ids.len();
    if inputs.len() != rows * id {
        return Err(Error::shape(format!("{} inputs for {rows} rows of {id}", inputs.len())));
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); bank.len()];
    for (r, &clip) in clip_ids.iter().enumerate() {
        groups[bank.cluster_of(clip)?].push(r);
    }
    let mut labels = vec![0.0; rows * ad];
    let mut x = Vec::new();
    for (c, rows_c) in groups.iter().enumerate() {
        if rows_c.is_empty() {
            continue;
        }
        x.clear();
        for &r in rows_c {
            x.extend_from_slice(&inputs[r * id..(r + 1) * id]);
        }
        let y = bank.specialists[c].means(&x, rows_c.len())?;
        for (k, &r) in rows_c.iter().enumerate() {
            labels[r * ad..(r + 1) * ad].copy_from_slice(&y[k * ad..(k + 1) * ad]);
        }
    }
    Ok(labels)
}
