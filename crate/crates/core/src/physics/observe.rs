//! Policy and critic observation vectors.

use crate::physics::dynamics::DynamicsConfig;
use crate::physics::model::RobotModel;
use crate::physics::sim::{Kinematics, SimState};
use crate::physics::terrain::Terrain;

/// Terrain probe offsets around each foot, in metres along x.
pub const TERRAIN_PROBES: [f64; 5] = [-0.2, -0.1, 0.0, 0.1, 0.2];

/// Proprioceptive state `s_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub pitch_rate: f64,
    pub projected_gravity: [f64; 2],
    pub joint_offset: Vec<f64>,
    pub qdot: Vec<f64>,
    pub last_action: Vec<f64>,
}

impl Observation {
    pub fn len_for(num_joints: usize) -> usize {
        3 + 3 * num_joints
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::len_for(self.qdot.len()));
        v.push(self.pitch_rate);
        v.extend_from_slice(&self.projected_gravity);
        v.extend_from_slice(&self.joint_offset);
        v.extend_from_slice(&self.qdot);
        v.extend_from_slice(&self.last_action);
        v
    }
}

pub fn observe(model: &RobotModel, state: &SimState) -> Observation {
    let (s, c) = state.base_pitch.sin_cos();
    Observation {
        pitch_rate: state.base_pitch_rate,
        projected_gravity: [s, -c],
        joint_offset: state
            .q
            .iter()
            .zip(&model.default_pose)
            .map(|(q, d)| q - d)
            .collect(),
        qdot: state.qdot.clone(),
        last_action: state.last_action.clone(),
    }
}

/// Critic-only input: observation, true dynamics, local terrain and base velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivilegedObservation {
    pub observation: Observation,
    pub config: Vec<f64>,
    /// Terrain height below each foot probe, relative to the foot origin.
    pub terrain_probes: Vec<f64>,
    pub base_vel: [f64; 2],
}

impl PrivilegedObservation {
    pub fn len_for(model: &RobotModel) -> usize {
        let nj = model.num_joints();
        Observation::len_for(nj)
            + DynamicsConfig::num_fields(nj)
            + model.feet.len() * TERRAIN_PROBES.len()
            + 2
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.observation.to_vec();
        v.extend_from_slice(&self.config);
        v.extend_from_slice(&self.terrain_probes);
        v.extend_from_slice(&self.base_vel);
        v
    }
}

pub fn privileged_observe(
    model: &RobotModel,
    state: &SimState,
    config: &DynamicsConfig,
    terrain: &Terrain,
) -> PrivilegedObservation {
    let kin = Kinematics::new(model, state);
    let mut probes = Vec::with_capacity(model.feet.len() * TERRAIN_PROBES.len());
    for &foot in &model.feet {
        let [x, z] = kin.origin[foot];
        probes.extend(TERRAIN_PROBES.iter().map(|dx| terrain.height(x + dx) - z));
    }
    PrivilegedObservation {
        observation: observe(model, state),
        config: config.flatten(),
        terrain_probes: probes,
        base_vel: state.base_vel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_rest() {
        let model = RobotModel::planar_biped();
        let state = SimState::standing(&model);
        let obs = observe(&model, &state);
        assert_eq!(obs.pitch_rate, 0.0);
        assert_eq!(obs.projected_gravity, [0.0, -1.0]);
        assert!(obs.joint_offset.iter().all(|&d| d == 0.0));
        assert_eq!(obs.to_vec().len(), Observation::len_for(6));
    }

    #[test]
    fn pitched_gravity() {
        let model = RobotModel::planar_biped();
        let mut state = SimState::standing(&model);
        state.base_pitch = std::f64::consts::FRAC_PI_2;
        let g = observe(&model, &state).projected_gravity;
        assert!((g[0] - 1.0).abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn privileged_length() {
        let model = RobotModel::planar_biped();
        let state = SimState::standing(&model);
        let cfg = DynamicsConfig::nominal(6);
        let p = privileged_observe(&model, &state, &cfg, &Terrain::flat(1.0));
        let expected = Observation::len_for(6) + DynamicsConfig::num_fields(6) + 2 * TERRAIN_PROBES.len() + 2;
        assert_eq!(p.to_vec().len(), expected);
        assert_eq!(PrivilegedObservation::len_for(&model), expected);
    }
}
