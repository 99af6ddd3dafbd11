//! Network input vectors built from simulator state and tracking goals.
//!
//! Everything is scaled to roughly unit magnitude with fixed constants so
//! that every stage sees identical inputs without running statistics.

use crate::motions::MotionFrame;
use crate::physics::{privileged_observe, DynamicsConfig, RobotModel, SimState, Terrain};

use super::reward::mean_link_error;

const PITCH_RATE_SCALE: f64 = 0.25;
const QDOT_SCALE: f64 = 0.1;
const HEIGHT_SCALE: f64 = 5.0;
const NOMINAL_HEIGHT: f64 = 0.8;

/// Proprioceptive state without the last action: pitch rate, projected
/// gravity, joint offsets and joint velocities.
pub fn proprio_len(model: &RobotModel) -> usize {
    3 + 2 * model.num_joints()
}

pub fn proprio_features(model: &RobotModel, state: &SimState, out: &mut Vec<f32>) {
    let (s, c) = state.base_pitch.sin_cos();
    out.push((state.base_pitch_rate * PITCH_RATE_SCALE) as f32);
    out.push(s as f32);
    out.push(-c as f32);
    for (q, d) in state.q.iter().zip(&model.default_pose) {
        out.push((q - d) as f32);
    }
    for v in &state.qdot {
        out.push((v * QDOT_SCALE) as f32);
    }
}

/// Observation: proprioception followed by the last squashed action.
pub fn observation_len(model: &RobotModel) -> usize {
    proprio_len(model) + model.num_joints()
}

pub fn observation_features(model: &RobotModel, state: &SimState, out: &mut Vec<f32>) {
    proprio_features(model, state, out);
    out.extend(state.last_action.iter().map(|&a| a as f32));
}

pub fn goal_len(model: &RobotModel) -> usize {
    3 * model.num_joints() + 6 + 3 * model.feet.len()
}

/// Targets of the next reference frame, partly expressed relative to the robot.
pub fn goal_features(model: &RobotModel, state: &SimState, goal: &MotionFrame, out: &mut Vec<f32>) {
    for (q, d) in goal.q.iter().zip(&model.default_pose) {
        out.push((q - d) as f32);
    }
    for (q, m) in goal.q.iter().zip(&state.q) {
        out.push((q - m) as f32);
    }
    for v in &goal.qdot {
        out.push((v * QDOT_SCALE) as f32);
    }
    out.push(goal.pitch as f32);
    out.push((goal.pitch - state.base_pitch) as f32);
    out.push((goal.pitch_rate * PITCH_RATE_SCALE) as f32);
    out.push(((goal.base_height - NOMINAL_HEIGHT) * HEIGHT_SCALE) as f32);
    out.push(goal.base_vel[0] as f32);
    out.push(goal.base_vel[1] as f32);
    for (i, &foot) in model.feet.iter().enumerate() {
        out.push((goal.feet_height[i] * HEIGHT_SCALE) as f32);
        out.push(goal.link_pos[foot][0] as f32);
        out.push((goal.link_pos[foot][1] + NOMINAL_HEIGHT) as f32);
    }
}

pub fn policy_input_len(model: &RobotModel) -> usize {
    observation_len(model) + goal_len(model)
}

pub fn policy_input(model: &RobotModel, state: &SimState, goal: &MotionFrame, out: &mut Vec<f32>) {
    observation_features(model, state, out);
    goal_features(model, state, goal, out);
}

pub fn critic_input_len(model: &RobotModel) -> usize {
    let nj = model.num_joints();
    policy_input_len(model)
        + DynamicsConfig::num_fields(nj)
        + model.feet.len() * crate::physics::observe::TERRAIN_PROBES.len()
        + 2
        + 2
}

/// Policy input plus privileged simulator information.
pub fn critic_input(
    model: &RobotModel,
    state: &SimState,
    goal: &MotionFrame,
    measured: &MotionFrame,
    config: &DynamicsConfig,
    terrain: &Terrain,
    out: &mut Vec<f32>,
) {
    policy_input(model, state, goal, out);
    let p = privileged_observe(model, state, config, terrain);
    // Interval and mass change span several units; shrink them.
    let scales = [1.0, 3.0, 0.1, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0, 0.2];
    for (i, v) in p.config.iter().enumerate() {
        let s = scales.get(i).copied().unwrap_or(10.0);
        out.push((v * s) as f32);
    }
    out.extend(p.terrain_probes.iter().map(|&v| (v * 2.0) as f32));
    out.extend(p.base_vel.iter().map(|&v| v as f32));
    out.push(((measured.base_height - goal.base_height) * HEIGHT_SCALE) as f32);
    out.push((mean_link_error(measured, goal) * HEIGHT_SCALE) as f32);
}
