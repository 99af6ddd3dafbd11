//! Planar articulated robot description.
//!
//! Link 0 is the floating base (the torso). Every other link hangs off a
//! parent through a single revolute joint; joint `j` drives link `j + 1`.
//! Local frames use the sagittal-plane convention `(x forward, z up)` and a
//! positive angle rotates the body's up axis towards +x.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    pub mass: f64,
    pub length: f64,
    /// Rotational inertia about the centre of mass.
    pub inertia: f64,
    /// Centre of mass in the link frame.
    pub com_offset: [f64; 2],
    pub parent: Option<usize>,
    /// Joint location in the parent's frame.
    pub attach: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub limit_lo: f64,
    pub limit_hi: f64,
    pub vel_limit: f64,
    pub torque_limit: f64,
    pub kp: f64,
    pub kd: f64,
    pub friction_coeff: f64,
    pub armature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactPoint {
    pub link: usize,
    pub offset: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotModel {
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    pub default_pose: Vec<f64>,
    /// Per-joint residual scale applied to `tanh` of the policy output.
    pub action_scale: Vec<f64>,
    pub contacts: Vec<ContactPoint>,
    /// Link index of each foot; contacts on that link belong to it.
    pub feet: Vec<usize>,
    /// Links counted as upper body for tracking rewards.
    pub upper_body: Vec<usize>,
    /// Joints whose negative excursion counts as a self-collision proxy.
    pub knees: Vec<usize>,
    pub gravity: f64,
    /// Pins the base in place (used for fixed-base test rigs).
    #[serde(default)]
    pub fixed_base: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    version: u32,
    model: RobotModel,
}

impl RobotModel {
    /// Torso plus hip/knee/ankle on each leg: 3 base DoF, 6 actuated joints.
    pub fn planar_biped() -> Self {
        let hip = |name: &str| JointSpec {
            name: name.into(),
            limit_lo: -1.6,
            limit_hi: 0.9,
            vel_limit: 12.0,
            torque_limit: 100.0,
            kp: 400.0,
            kd: 8.0,
            friction_coeff: 0.1,
            armature: 0.02,
        };
        let knee = |name: &str| JointSpec {
            name: name.into(),
            limit_lo: -0.1,
            limit_hi: 2.4,
            vel_limit: 12.0,
            torque_limit: 120.0,
            kp: 400.0,
            kd: 8.0,
            friction_coeff: 0.1,
            armature: 0.02,
        };
        let ankle = |name: &str| JointSpec {
            name: name.into(),
            limit_lo: -0.9,
            limit_hi: 0.9,
            vel_limit: 12.0,
            torque_limit: 60.0,
            kp: 400.0,
            kd: 6.0,
            friction_coeff: 0.1,
            armature: 0.02,
        };
        let mut links = vec![LinkSpec {
            name: "torso".into(),
            mass: 12.0,
            length: 0.5,
            inertia: 12.0 * 0.25 / 12.0,
            com_offset: [0.0, 0.25],
            parent: None,
            attach: [0.0, 0.0],
        }];
        let mut joints = Vec::new();
        for side in ["l", "r"] {
            let base = links.len();
            links.push(LinkSpec {
                name: format!("thigh_{side}"),
                mass: 2.0,
                length: 0.4,
                inertia: 2.0 * 0.16 / 12.0,
                com_offset: [0.0, -0.2],
                parent: Some(0),
                attach: [0.0, 0.0],
            });
            links.push(LinkSpec {
                name: format!("shank_{side}"),
                mass: 1.5,
                length: 0.4,
                inertia: 1.5 * 0.16 / 12.0,
                com_offset: [0.0, -0.2],
                parent: Some(base),
                attach: [0.0, -0.4],
            });
            links.push(LinkSpec {
                name: format!("foot_{side}"),
                mass: 0.6,
                length: 0.24,
                inertia: 0.6 * (0.24 * 0.24 + 0.05 * 0.05) / 12.0,
                com_offset: [0.04, -0.035],
                parent: Some(base + 1),
                attach: [0.0, -0.4],
            });
            joints.push(hip(&format!("hip_{side}")));
            joints.push(knee(&format!("knee_{side}")));
            joints.push(ankle(&format!("ankle_{side}")));
        }
        let contacts = [3usize, 6]
            .iter()
            .flat_map(|&foot| {
                [[-0.08, -0.05], [0.16, -0.05]]
                    .into_iter()
                    .map(move |offset| ContactPoint { link: foot, offset })
            })
            .collect();
        RobotModel {
            links,
            joints,
            default_pose: vec![-0.25, 0.5, -0.25, -0.25, 0.5, -0.25],
            action_scale: vec![0.6, 0.6, 0.4, 0.6, 0.6, 0.4],
            contacts,
            feet: vec![3, 6],
            upper_body: vec![0],
            knees: vec![1, 4],
            gravity: 9.81,
            fixed_base: false,
        }
    }

    /// A fixed base with one hanging link, for checking the integrator
    /// against the compound-pendulum period.
    pub fn single_pendulum(mass: f64, length: f64, inertia: f64) -> Self {
        RobotModel {
            links: vec![
                LinkSpec {
                    name: "anchor".into(),
                    mass: 1.0,
                    length: 0.1,
                    inertia: 0.01,
                    com_offset: [0.0, 0.0],
                    parent: None,
                    attach: [0.0, 0.0],
                },
                LinkSpec {
                    name: "bob".into(),
                    mass,
                    length,
                    inertia,
                    com_offset: [0.0, -length],
                    parent: Some(0),
                    attach: [0.0, 0.0],
                },
            ],
            joints: vec![JointSpec {
                name: "pivot".into(),
                limit_lo: -10.0,
                limit_hi: 10.0,
                vel_limit: 100.0,
                torque_limit: 1.0,
                kp: 0.0,
                kd: 0.0,
                friction_coeff: 0.0,
                armature: 0.0,
            }],
            default_pose: vec![0.0],
            action_scale: vec![0.5],
            contacts: vec![],
            feet: vec![],
            upper_body: vec![0],
            knees: vec![],
            gravity: 9.81,
            fixed_base: true,
        }
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    /// Generalized coordinates: base x, base z, base pitch, then joints.
    pub fn num_dofs(&self) -> usize {
        3 + self.joints.len()
    }

    pub fn lower_body(&self) -> Vec<usize> {
        (0..self.links.len())
            .filter(|l| !self.upper_body.contains(l))
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() || self.links[0].parent.is_some() {
            return Err(Error::config("link 0 must be the parentless base"));
        }
        if self.joints.len() + 1 != self.links.len() {
            return Err(Error::config(format!(
                "expected {} joints for {} links, found {}",
                self.links.len() - 1,
                self.links.len(),
                self.joints.len()
            )));
        }
        for (i, link) in self.links.iter().enumerate() {
            if !(link.mass > 0.0) || !(link.inertia > 0.0) {
                return Err(Error::config(format!(
                    "link {} ({}): mass and inertia must be positive",
                    i, link.name
                )));
            }
            if i > 0 {
                match link.parent {
                    Some(p) if p < i => {}
                    _ => {
                        return Err(Error::config(format!(
                            "link {} ({}): parent must precede it",
                            i, link.name
                        )))
                    }
                }
            }
        }
        let nj = self.joints.len();
        for (name, v) in [
            ("default_pose", &self.default_pose),
            ("action_scale", &self.action_scale),
        ] {
            if v.len() != nj {
                return Err(Error::config(format!(
                    "{name} has {} entries, expected {nj}",
                    v.len()
                )));
            }
        }
        for (j, joint) in self.joints.iter().enumerate() {
            if !(joint.limit_lo < joint.limit_hi) {
                return Err(Error::config(format!(
                    "joint {}: limit_lo must be below limit_hi",
                    joint.name
                )));
            }
            if !(joint.torque_limit > 0.0) {
                return Err(Error::config(format!(
                    "joint {}: torque_limit must be positive",
                    joint.name
                )));
            }
            if !(self.action_scale[j] > 0.0) {
                return Err(Error::config(format!(
                    "joint {}: action scale must be positive",
                    joint.name
                )));
            }
        }
        for c in &self.contacts {
            if c.link >= self.links.len() {
                return Err(Error::config(format!("contact on missing link {}", c.link)));
            }
        }
        for idx in self.feet.iter().chain(&self.upper_body) {
            if *idx >= self.links.len() {
                return Err(Error::config(format!("link index {idx} out of range")));
            }
        }
        for &k in &self.knees {
            if k >= nj {
                return Err(Error::config(format!("knee joint index {k} out of range")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument {
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported robot model version {}",
                doc.version
            )));
        }
        doc.model.validate()?;
        Ok(doc.model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biped_is_valid() {
        let model = RobotModel::planar_biped();
        model.validate().unwrap();
        assert_eq!(model.num_joints(), 6);
        assert_eq!(model.num_dofs(), 9);
        assert_eq!(model.lower_body(), vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn json_round_trip() {
        let model = RobotModel::planar_biped();
        let back = RobotModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn rejects_bad_limits_and_masses() {
        let mut model = RobotModel::planar_biped();
        model.joints[2].limit_lo = 1.0;
        model.joints[2].limit_hi = 0.5;
        assert!(matches!(model.validate(), Err(Error::Config(_))));

        let mut model = RobotModel::planar_biped();
        model.links[3].mass = 0.0;
        assert!(model.validate().is_err());

        let mut model = RobotModel::planar_biped();
        model.action_scale[0] = 0.0;
        assert!(model.validate().is_err());
    }

    #[test]
    fn rejects_wrong_version() {
        let text = RobotModel::planar_biped()
            .to_json()
            .unwrap()
            .replace("\"version\": 1", "\"version\": 9");
        assert!(RobotModel::from_json(&text).is_err());
    }
}
