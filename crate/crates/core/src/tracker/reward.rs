//! Action canonicalization, tracking rewards and termination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motions::MotionFrame;
use crate::physics::{Kinematics, RobotModel, SimState, Terrain};

/// `q_d = q_ref + α ⊙ tanh(a)`.
pub fn canonicalize_action(policy_out: &[f64], q_target_next: &[f64], alpha: &[f64]) -> Vec<f64> {
    policy_out
        .iter()
        .zip(q_target_next)
        .zip(alpha)
        .map(|((a, q), s)| q + s * a.tanh())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub upper_body_pos: f64,
    pub lower_body_pos: f64,
    pub torso_pitch: f64,
    pub body_rot: f64,
    pub body_lin_vel: f64,
    pub body_ang_vel: f64,
    pub dof_pos: f64,
    pub dof_vel: f64,
    pub root_lin_vel: f64,
    pub root_ang_vel: f64,
    pub root_height: f64,
    pub feet_height: f64,
    pub action_rate: f64,
    pub dof_vel_rate: f64,
    pub torques: f64,
    pub dof_pos_limits: f64,
    pub dof_vel_limits: f64,
    pub self_collision: f64,
    pub termination: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            upper_body_pos: 1.0,
            lower_body_pos: 0.5,
            torso_pitch: 1.0,
            body_rot: 0.5,
            body_lin_vel: 0.5,
            body_ang_vel: 0.5,
            dof_pos: 0.75,
            dof_vel: 0.5,
            root_lin_vel: 1.0,
            root_ang_vel: 1.0,
            root_height: 1.0,
            feet_height: 1.0,
            action_rate: -0.5,
            dof_vel_rate: -1e-6,
            torques: -2e-5,
            dof_pos_limits: -10.0,
            dof_vel_limits: -5.0,
            self_collision: -10.0,
            termination: -200.0,
        }
    }
}

impl RewardWeights {
    pub fn task(&self) -> [f64; 12] {
        [
            self.upper_body_pos,
            self.lower_body_pos,
            self.torso_pitch,
            self.body_rot,
            self.body_lin_vel,
            self.body_ang_vel,
            self.dof_pos,
            self.dof_vel,
            self.root_lin_vel,
            self.root_ang_vel,
            self.root_height,
            self.feet_height,
        ]
    }

    pub fn penalties(&self) -> [f64; 6] {
        [
            self.action_rate,
            self.dof_vel_rate,
            self.torques,
            self.dof_pos_limits,
            self.dof_vel_limits,
            self.self_collision,
        ]
    }

    pub fn task_sum(&self) -> f64 {
        self.task().iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.task().iter().enumerate() {
            if !(*w > 0.0) {
                return Err(Error::config(format!(
                    "reward.weights: task term {} must be positive",
                    TERM_NAMES[i]
                )));
            }
        }
        for (i, w) in self.penalties().iter().enumerate() {
            if !(*w <= 0.0) {
                return Err(Error::config(format!(
                    "reward.weights: penalty {} must be <= 0",
                    TERM_NAMES[12 + i]
                )));
            }
        }
        if !(self.termination < 0.0) {
            return Err(Error::config("reward.weights.termination must be negative"));
        }
        Ok(())
    }
}

/// Kernel widths for the task terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSigmas {
    pub position: f64,
    pub velocity: f64,
    pub angular_velocity: f64,
    pub angle: f64,
    pub dof_pos: f64,
    pub dof_vel: f64,
    pub pitch: f64,
    pub height: f64,
}

impl Default for RewardSigmas {
    fn default() -> Self {
        RewardSigmas {
            position: 0.3,
            velocity: 1.0,
            angular_velocity: 2.0,
            angle: 0.4,
            dof_pos: 0.35,
            dof_vel: 6.0,
            pitch: 0.4,
            height: 0.15,
        }
    }
}

impl RewardSigmas {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position,
            self.velocity,
            self.angular_velocity,
            self.angle,
            self.dof_pos,
            self.dof_vel,
            self.pitch,
            self.height,
        ];
        if all.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::config("reward.sigmas must all be positive"));
        }
        Ok(())
    }
}

pub const TERM_NAMES: [&str; 19] = [
    "upper_body_pos",
    "lower_body_pos",
    "torso_pitch",
    "body_rot",
    "body_lin_vel",
    "body_ang_vel",
    "dof_pos",
    "dof_vel",
    "root_lin_vel",
    "root_ang_vel",
    "root_height",
    "feet_height",
    "action_rate",
    "dof_vel_rate",
    "torques",
    "dof_pos_limits",
    "dof_vel_limits",
    "self_collision",
    "termination",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Reward {
    pub total: f64,
    /// One entry per name in [`TERM_NAMES`].
    pub terms: [f64; 19],
}

/// Robot quantities in the same layout as a reference frame: link positions
/// relative to the base, heights relative to the terrain below.
pub fn measure(model: &RobotModel, state: &SimState, terrain: &Terrain) -> MotionFrame {
    let kin = Kinematics::new(model, state);
    let base = state.base_pos;
    let mut link_pos = Vec::with_capacity(model.num_links());
    let mut link_vel = Vec::with_capacity(model.num_links());
    for (i, link) in model.links.iter().enumerate() {
        let p = kin.point(i, link.com_offset);
        link_pos.push([p[0] - base[0], p[1] - base[1]]);
        link_vel.push(kin.point_velocity(i, link.com_offset));
    }
    let feet_height = model
        .feet
        .iter()
        .map(|&f| {
            model
                .contacts
                .iter()
                .filter(|c| c.link == f)
                .map(|c| {
                    let p = kin.point(c.link, c.offset);
                    p[1] - terrain.height(p[0])
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    MotionFrame {
        q: state.q.clone(),
        qdot: state.qdot.clone(),
        base_x: base[0],
        base_height: base[1] - terrain.height(base[0]),
        base_vel: state.base_vel,
        pitch: state.base_pitch,
        pitch_rate: state.base_pitch_rate,
        link_pos,
        link_vel,
        link_angle: kin.angle,
        link_rate: kin.rate,
        feet_height,
    }
}

fn mean_sq_points(a: &[[f64; 2]], b: &[[f64; 2]], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter()
        .map(|&i| (a[i][0] - b[i][0]).powi(2) + (a[i][1] - b[i][1]).powi(2))
        .sum::<f64>()
        / idx.len() as f64
}

fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Mean Euclidean link position error (m), base-relative.
pub fn mean_link_error(measured: &MotionFrame, goal: &MotionFrame) -> f64 {
    let n = measured.link_pos.len();
    measured
        .link_pos
        .iter()
        .zip(&goal.link_pos)
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .sum::<f64>()
        / n as f64
}

pub const FAIL_DISTANCE: f64 = 0.2;
pub const FALL_PITCH: f64 = 1.2;

/// Failure rule shared by training and evaluation.
pub fn check_termination(measured: &MotionFrame, goal: &MotionFrame) -> bool {
    exceeds_threshold(measured, goal, FAIL_DISTANCE) || measured.pitch.abs() > FALL_PITCH
}

pub fn exceeds_threshold(measured: &MotionFrame, goal: &MotionFrame, threshold: f64) -> bool {
    mean_link_error(measured, goal) > threshold
        || (measured.base_height - goal.base_height).abs() > threshold
}

/// Inputs describing one control step.
#[derive(Debug, Clone, Copy)]
pub struct RewardInputs<'a> {
    pub measured: &'a MotionFrame,
    pub goal: &'a MotionFrame,
    /// Squashed actions in `[-1, 1]`.
    pub action: &'a [f64],
    pub prev_action: &'a [f64],
    pub qdot_prev: &'a [f64],
    pub torques: &'a [f64],
    pub terminated: bool,
}

pub fn compute_reward(
    model: &RobotModel,
    weights: &RewardWeights,
    sigmas: &RewardSigmas,
    inp: RewardInputs<'_>,
) -> Reward {
    let m = inp.measured;
    let g = inp.goal;
    let kernel = |w: f64, err_sq: f64, sigma: f64| w * (-err_sq / (sigma * sigma)).exp();
    let upper = model.upper_body.clone();
    let lower = model.lower_body();
    let all: Vec<usize> = (0..model.num_links()).collect();
    let mut t = [0.0; 19];
    t[0] = kernel(weights.upper_body_pos, mean_sq_points(&m.link_pos, &g.link_pos, &upper), sigmas.position);
    t[1] = kernel(weights.lower_body_pos, mean_sq_points(&m.link_pos, &g.link_pos, &lower), sigmas.position);
    t[2] = kernel(weights.torso_pitch, (m.pitch - g.pitch).powi(2), sigmas.pitch);
    t[3] = kernel(weights.body_rot, mean_sq(&m.link_angle, &g.link_angle), sigmas.angle);
    t[4] = kernel(weights.body_lin_vel, mean_sq_points(&m.link_vel, &g.link_vel, &all), sigmas.velocity);
    t[5] = kernel(weights.body_ang_vel, mean_sq(&m.link_rate, &g.link_rate), sigmas.angular_velocity);
    t[6] = kernel(weights.dof_pos, mean_sq(&m.q, &g.q), sigmas.dof_pos);
    t[7] = kernel(weights.dof_vel, mean_sq(&m.qdot, &g.qdot), sigmas.dof_vel);
    t[8] = kernel(weights.root_lin_vel, mean_sq(&m.base_vel, &g.base_vel), sigmas.velocity);
    t[9] = kernel(weights.root_ang_vel, (m.pitch_rate - g.pitch_rate).powi(2), sigmas.angular_velocity);
    t[10] = kernel(weights.root_height, (m.base_height - g.base_height).powi(2), sigmas.height);
    t[11] = kernel(weights.feet_height, mean_sq(&m.feet_height, &g.feet_height), sigmas.height);

    let sq = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>();
    t[12] = weights.action_rate * sq(&mut inp.action.iter().zip(inp.prev_action).map(|(a, b)| a - b));
    t[13] = weights.dof_vel_rate * sq(&mut m.qdot.iter().zip(inp.qdot_prev).map(|(a, b)| a - b));
    t[14] = weights.torques * sq(&mut inp.torques.iter().copied());
    let mut pos_excess = 0.0;
    let mut vel_excess = 0.0;
    for (j, joint) in model.joints.iter().enumerate() {
        let (lo, hi) = soft_limits(joint.limit_lo, joint.limit_hi);
        let q = m.q[j];
        pos_excess += (lo - q).max(0.0).powi(2) + (q - hi).max(0.0).powi(2);
        vel_excess += (m.qdot[j].abs() - joint.vel_limit).max(0.0).powi(2);
    }
    t[15] = weights.dof_pos_limits * pos_excess;
    t[16] = weights.dof_vel_limits * vel_excess;
    t[17] = weights.self_collision * model.knees.iter().map(|&k| (-m.q[k]).max(0.0).powi(2)).sum::<f64>();
    t[18] = if inp.terminated { weights.termination } else { 0.0 };
    Reward {
        total: t.iter().sum(),
        terms: t,
    }
}

/// Inner 95% of the joint range.
pub fn soft_limits(lo: f64, hi: f64) -> (f64, f64) {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo) * 0.95;
    (mid - half, mid + half)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motions::{generate_clip, MotionKind, MotionParams};

    #[test]
    fn canonical_action_examples() {
        assert_eq!(canonicalize_action(&[0.0], &[0.3], &[0.5]), vec![0.3]);
        assert_eq!(canonicalize_action(&[1e6], &[0.3], &[0.5]), vec![0.3 + 0.5]);
        let q = canonicalize_action(&[0.5], &[0.3], &[0.5])[0];
        assert!((q - 0.53105).abs() < 1e-5, "{q}");
    }

    #[test]
    fn task_weights_sum() {
        assert!((RewardWeights::default().task_sum() - 9.25).abs() < 1e-12);
        RewardWeights::default().validate().unwrap();
    }

    fn walk_frame() -> (RobotModel, MotionFrame) {
        let model = RobotModel::planar_biped();
        let p = MotionParams {
            amplitude: 0.2,
            frequency: 0.8,
            phase: 0.0,
            aux: 0.4,
        };
        let clip = generate_clip(&model, MotionKind::Walk, &p, 2.0, 50.0, 0).unwrap();
        (model, clip.frames[17].clone())
    }

    #[test]
    fn perfect_tracking_earns_task_sum() {
        let (model, f) = walk_frame();
        let w = RewardWeights::default();
        let zeros = vec![0.0; 6];
        let r = compute_reward(
            &model,
            &w,
            &RewardSigmas::default(),
            RewardInputs {
                measured: &f,
                goal: &f,
                action: &zeros,
                prev_action: &zeros,
                qdot_prev: &f.qdot,
                torques: &zeros,
                terminated: false,
            },
        );
        assert!((r.total - 9.25).abs() < 1e-12, "{}", r.total);
        let r2 = compute_reward(
            &model,
            &w,
            &RewardSigmas::default(),
            RewardInputs {
                terminated: true,
                measured: &f,
                goal: &f,
                action: &zeros,
                prev_action: &zeros,
                qdot_prev: &f.qdot,
                torques: &zeros,
            },
        );
        assert_eq!(r2.terms[18], -200.0);
        assert!((r2.total - r.total + 200.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_error_scales_kernel() {
        let (model, goal) = walk_frame();
        let w = RewardWeights::default();
        let s = RewardSigmas::default();
        let zeros = vec![0.0; 6];
        let at = |e: f64| {
            let mut m = goal.clone();
            m.pitch += e;
            compute_reward(
                &model,
                &w,
                &s,
                RewardInputs {
                    measured: &m,
                    goal: &goal,
                    action: &zeros,
                    prev_action: &zeros,
                    qdot_prev: &goal.qdot,
                    torques: &zeros,
                    terminated: false,
                },
            )
        };
        let e = 0.1;
        let (a, b) = (at(e), at(2.0 * e));
        let ratio = b.terms[2] / a.terms[2];
        let sig2 = s.pitch * s.pitch;
        let expect = (-4.0 * e * e / sig2).exp() / (-e * e / sig2).exp();
        assert!((ratio - expect).abs() < 1e-12);
        for i in (0..19).filter(|&i| i != 2) {
            assert_eq!(a.terms[i], b.terms[i], "term {}", TERM_NAMES[i]);
        }
    }

    #[test]
    fn termination_rule() {
        let (_, goal) = walk_frame();
        assert!(!check_termination(&goal, &goal));
        let mut m = goal.clone();
        m.base_height += 0.25;
        assert!(check_termination(&m, &goal));
        let mut m = goal.clone();
        m.base_height += 0.1;
        for p in &mut m.link_pos {
            p[0] += 0.19;
        }
        assert!(!check_termination(&m, &goal));
        let mut m = goal.clone();
        m.pitch = 1.3;
        assert!(check_termination(&m, &goal));
    }

    #[test]
    fn measured_standing_matches_reference() {
        let model = RobotModel::planar_biped();
        let clip = generate_clip(&model, MotionKind::Stand, &MotionParams::zero(), 1.0, 50.0, 0).unwrap();
        let f = &clip.frames[0];
        let state = SimState {
            base_pos: [1.0, f.base_height],
            base_pitch: 0.0,
            base_vel: [0.0; 2],
            base_pitch_rate: 0.0,
            q: f.q.clone(),
            qdot: f.qdot.clone(),
            time: 0.0,
            last_action: vec![0.0; 6],
        };
        let m = measure(&model, &state, &Terrain::flat(1.0));
        assert!(mean_link_error(&m, f) < 1e-12);
        assert!((m.base_height - f.base_height).abs() < 1e-12);
        for (a, b) in m.feet_height.iter().zip(&f.feet_height) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
