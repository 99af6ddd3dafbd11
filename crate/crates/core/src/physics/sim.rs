//! Planar floating-base dynamics integrated with semi-implicit Euler.
//!
//! Generalized coordinates are `[x, z, pitch, q_0 .. q_{n-1}]`. The mass
//! matrix and generalized forces are assembled per link from centre-of-mass
//! Jacobians: `M = Σ m Jᵀ J + I Jωᵀ Jω`, and the velocity-product terms enter
//! through each link's bias acceleration `Σ -ω² r` over its kinematic chain.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::dynamics::{DynamicsConfig, Push};
use crate::physics::model::{JointSpec, RobotModel};
use crate::physics::terrain::Terrain;

pub const SIM_DT: f64 = 0.002;
pub const CONTROL_DECIMATION: usize = 10;

/// Stiffness of the soft joint stops, N·m/rad.
const LIMIT_STIFFNESS: f64 = 500.0;
const LIMIT_DAMPING: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub base_pos: [f64; 2],
    pub base_pitch: f64,
    pub base_vel: [f64; 2],
    pub base_pitch_rate: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub time: f64,
    pub last_action: Vec<f64>,
}

impl SimState {
    /// Standing in the default pose with both soles resting on flat ground.
    pub fn standing(model: &RobotModel) -> Self {
        let mut state = SimState {
            base_pos: [0.0, 0.0],
            base_pitch: 0.0,
            base_vel: [0.0, 0.0],
            base_pitch_rate: 0.0,
            q: model.default_pose.clone(),
            qdot: vec![0.0; model.num_joints()],
            time: 0.0,
            last_action: vec![0.0; model.num_joints()],
        };
        let kin = Kinematics::new(model, &state);
        let lowest = model
            .contacts
            .iter()
            .map(|c| kin.point(c.link, c.offset)[1])
            .fold(f64::INFINITY, f64::min);
        if lowest.is_finite() {
            state.base_pos[1] = -lowest;
        }
        state
    }

    pub fn generalized_velocity(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 + self.qdot.len());
        v.extend_from_slice(&self.base_vel);
        v.push(self.base_pitch_rate);
        v.extend_from_slice(&self.qdot);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.base_pos.iter().all(|v| v.is_finite())
            && self.base_vel.iter().all(|v| v.is_finite())
            && self.base_pitch.is_finite()
            && self.base_pitch_rate.is_finite()
            && self.q.iter().all(|v| v.is_finite())
            && self.qdot.iter().all(|v| v.is_finite())
    }
}

/// Rotate a link-frame vector into the world by `angle`.
#[inline]
pub fn rotate(angle: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
}

/// Derivative of a rotated world vector with respect to its angle.
#[inline]
fn perp(w: [f64; 2]) -> [f64; 2] {
    [w[1], -w[0]]
}

/// Position, Jacobian and velocity-product acceleration of a body point.
#[derive(Debug, Clone)]
pub struct PointJacobian {
    pub pos: [f64; 2],
    /// One `(dx, dz)` column per generalized coordinate.
    pub jac: Vec<[f64; 2]>,
    pub bias: [f64; 2],
}

impl PointJacobian {
    pub fn velocity(&self, v: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (col, vi) in self.jac.iter().zip(v) {
            out[0] += col[0] * vi;
            out[1] += col[1] * vi;
        }
        out
    }
}

/// Absolute link angles, rates and frame origins for one state.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub angle: Vec<f64>,
    pub rate: Vec<f64>,
    pub origin: Vec<[f64; 2]>,
    pub origin_vel: Vec<[f64; 2]>,
}

impl Kinematics {
    pub fn new(model: &RobotModel, state: &SimState) -> Self {
        let n = model.num_links();
        let mut angle = vec![0.0; n];
        let mut rate = vec![0.0; n];
        let mut origin = vec![[0.0; 2]; n];
        let mut origin_vel = vec![[0.0; 2]; n];
        angle[0] = state.base_pitch;
        rate[0] = state.base_pitch_rate;
        origin[0] = state.base_pos;
        origin_vel[0] = state.base_vel;
        for i in 1..n {
            let link = &model.links[i];
            let p = link.parent.expect("validated model");
            angle[i] = angle[p] + state.q[i - 1];
            rate[i] = rate[p] + state.qdot[i - 1];
            let w = rotate(angle[p], link.attach);
            let dw = perp(w);
            origin[i] = [origin[p][0] + w[0], origin[p][1] + w[1]];
            origin_vel[i] = [
                origin_vel[p][0] + rate[p] * dw[0],
                origin_vel[p][1] + rate[p] * dw[1],
            ];
        }
        Kinematics {
            angle,
            rate,
            origin,
            origin_vel,
        }
    }

    pub fn point_velocity(&self, link: usize, local: [f64; 2]) -> [f64; 2] {
        let dw = perp(rotate(self.angle[link], local));
        [
            self.origin_vel[link][0] + self.rate[link] * dw[0],
            self.origin_vel[link][1] + self.rate[link] * dw[1],
        ]
    }

    pub fn point(&self, link: usize, local: [f64; 2]) -> [f64; 2] {
        let w = rotate(self.angle[link], local);
        [self.origin[link][0] + w[0], self.origin[link][1] + w[1]]
    }

    pub fn point_jacobian(&self, model: &RobotModel, link: usize, local: [f64; 2]) -> PointJacobian {
        let ndof = model.num_dofs();
        let mut jac = vec![[0.0; 2]; ndof];
        jac[0] = [1.0, 0.0];
        jac[1] = [0.0, 1.0];
        let mut pos = self.origin[0];
        let mut bias = [0.0; 2];
        // Walk the chain from the point back to the base; every segment rotates
        // with its link's absolute angle.
        let mut seg_link = link;
        let mut seg_vec = local;
        loop {
            let w = rotate(self.angle[seg_link], seg_vec);
            let dw = perp(w);
            pos[0] += w[0];
            pos[1] += w[1];
            let om2 = self.rate[seg_link] * self.rate[seg_link];
            bias[0] -= om2 * w[0];
            bias[1] -= om2 * w[1];
            jac[2][0] += dw[0];
            jac[2][1] += dw[1];
            let mut a = seg_link;
            while a != 0 {
                let col = &mut jac[3 + a - 1];
                col[0] += dw[0];
                col[1] += dw[1];
                a = model.links[a].parent.expect("validated model");
            }
            if seg_link == 0 {
                break;
            }
            seg_vec = model.links[seg_link].attach;
            seg_link = model.links[seg_link].parent.expect("validated model");
        }
        PointJacobian { pos, jac, bias }
    }

    /// Generalized coordinates that rotate `link`: pitch plus every ancestor joint.
    pub fn angular_jacobian(model: &RobotModel, link: usize) -> Vec<f64> {
        let mut row = vec![0.0; model.num_dofs()];
        row[2] = 1.0;
        let mut a = link;
        while a != 0 {
            row[3 + a - 1] = 1.0;
            a = model.links[a].parent.expect("validated model");
        }
        row
    }
}

/// Penalty contact parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    pub k_n: f64,
    pub c_n: f64,
    pub k_t: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            k_n: 1e4,
            c_n: 100.0,
            k_t: 500.0,
        }
    }
}

/// Spring-damper normal force with a Coulomb-capped viscous tangential force.
pub fn contact_force(
    point_pos: [f64; 2],
    point_vel: [f64; 2],
    terrain: &Terrain,
    mu: f64,
    params: &ContactParams,
) -> [f64; 2] {
    let depth = terrain.height(point_pos[0]) - point_pos[1];
    if depth <= 0.0 {
        return [0.0, 0.0];
    }
    let normal = (params.k_n * depth - params.c_n * point_vel[1]).max(0.0);
    let cap = mu * normal;
    let tangential = -(params.k_t * point_vel[0]).clamp(-cap, cap);
    [tangential, normal]
}

/// PD torque for one joint, saturated, then reduced by Coulomb joint friction.
pub fn joint_torque(q_d: f64, q: f64, qdot: f64, joint: &JointSpec, friction_scale: f64) -> f64 {
    let tau = (joint.kp * (q_d - q) - joint.kd * qdot)
        .clamp(-joint.torque_limit, joint.torque_limit);
    let friction = (joint.friction_coeff * friction_scale).min(tau.abs());
    let sign = if qdot > 0.0 {
        1.0
    } else if qdot < 0.0 {
        -1.0
    } else {
        0.0
    };
    tau - friction * sign
}

pub fn pd_torque(
    q_d: &[f64],
    q: &[f64],
    qdot: &[f64],
    joints: &[JointSpec],
    friction_scale: f64,
) -> Vec<f64> {
    joints
        .iter()
        .enumerate()
        .map(|(j, joint)| joint_torque(q_d[j], q[j], qdot[j], joint, friction_scale))
        .collect()
}

fn limit_torque(q: f64, qdot: f64, joint: &JointSpec) -> f64 {
    if q > joint.limit_hi {
        -LIMIT_STIFFNESS * (q - joint.limit_hi) - LIMIT_DAMPING * qdot.max(0.0)
    } else if q < joint.limit_lo {
        LIMIT_STIFFNESS * (joint.limit_lo - q) - LIMIT_DAMPING * qdot.min(0.0)
    } else {
        0.0
    }
}

pub fn apply_push(state: &SimState, push: &Push) -> SimState {
    let mut next = state.clone();
    next.base_vel[0] += push.delta_base_vel[0];
    next.base_vel[1] += push.delta_base_vel[1];
    next
}

/// Mass, inertia and centre of mass of each link after applying `config`.
#[derive(Debug, Clone)]
pub struct EffectiveBodies {
    pub mass: Vec<f64>,
    pub inertia: Vec<f64>,
    pub com: Vec<[f64; 2]>,
    pub armature: Vec<f64>,
}

impl EffectiveBodies {
    pub fn new(model: &RobotModel, config: &DynamicsConfig) -> Self {
        let mut mass: Vec<f64> = model.links.iter().map(|l| l.mass).collect();
        let inertia = model.links.iter().map(|l| l.inertia).collect();
        let mut com: Vec<[f64; 2]> = model.links.iter().map(|l| l.com_offset).collect();
        // The base link stands in for the torso.
        mass[0] = (mass[0] + config.torso_mass_delta).max(0.1 * model.links[0].mass);
        com[0][0] += config.torso_com_shift;
        let armature = model
            .joints
            .iter()
            .map(|j| j.armature * config.armature_scale)
            .collect();
        EffectiveBodies {
            mass,
            inertia,
            com,
            armature,
        }
    }
}

/// Everything the integrator needs beyond the state itself.
#[derive(Debug, Clone, Copy)]
pub struct World<'a> {
    pub model: &'a RobotModel,
    pub terrain: &'a Terrain,
    pub config: &'a DynamicsConfig,
    pub contact: ContactParams,
}

impl<'a> World<'a> {
    pub fn new(model: &'a RobotModel, terrain: &'a Terrain, config: &'a DynamicsConfig) -> Self {
        World {
            model,
            terrain,
            config,
            contact: ContactParams::default(),
        }
    }
}

/// Result of one integration step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: SimState,
    /// Actuator torques applied during the step.
    pub torques: Vec<f64>,
}

/// Generalized accelerations and actuator torques at `state`.
pub fn accelerations(
    world: &World<'_>,
    bodies: &EffectiveBodies,
    state: &SimState,
    pd_targets: &[f64],
) -> Result<Accelerations> {
    let model = world.model;
    let ndof = model.num_dofs();
    let nj = model.num_joints();
    let kin = Kinematics::new(model, state);
    let v = state.generalized_velocity();
    let g = [0.0, -model.gravity];

    let mut mass = DMatrix::<f64>::zeros(ndof, ndof);
    let mut force = DVector::<f64>::zeros(ndof);

    for i in 0..model.num_links() {
        let pj = kin.point_jacobian(model, i, bodies.com[i]);
        let m = bodies.mass[i];
        let f = [m * (g[0] - pj.bias[0]), m * (g[1] - pj.bias[1])];
        for a in 0..ndof {
            let ja = pj.jac[a];
            if ja == [0.0, 0.0] {
                continue;
            }
            force[a] += ja[0] * f[0] + ja[1] * f[1];
            for b in a..ndof {
                let jb = pj.jac[b];
                mass[(a, b)] += m * (ja[0] * jb[0] + ja[1] * jb[1]);
            }
        }
        let jw = Kinematics::angular_jacobian(model, i);
        for a in 0..ndof {
            if jw[a] == 0.0 {
                continue;
            }
            for b in a..ndof {
                mass[(a, b)] += bodies.inertia[i] * jw[a] * jw[b];
            }
        }
    }
    for a in 0..ndof {
        for b in 0..a {
            mass[(a, b)] = mass[(b, a)];
        }
    }

    let mut torques = Vec::with_capacity(nj);
    for (j, joint) in model.joints.iter().enumerate() {
        mass[(3 + j, 3 + j)] += bodies.armature[j];
        let target = pd_targets[j] + world.config.default_pose_jitter.get(j).copied().unwrap_or(0.0);
        let tau = joint_torque(
            target,
            state.q[j],
            state.qdot[j],
            joint,
            world.config.dof_friction_scale,
        );
        torques.push(tau);
        force[3 + j] += tau + limit_torque(state.q[j], state.qdot[j], joint);
    }

    let mu = world.terrain.friction;
    let mut external_fx = 0.0;
    for c in &model.contacts {
        let pj = kin.point_jacobian(model, c.link, c.offset);
        let vel = pj.velocity(&v);
        let f = contact_force(pj.pos, vel, world.terrain, mu, &world.contact);
        if f == [0.0, 0.0] {
            continue;
        }
        external_fx += f[0];
        for a in 0..ndof {
            force[a] += pj.jac[a][0] * f[0] + pj.jac[a][1] * f[1];
        }
    }

    let acc = if model.fixed_base {
        let mj = mass.view((3, 3), (nj, nj)).into_owned();
        let fj = force.rows(3, nj).into_owned();
        let chol = mj
            .cholesky()
            .ok_or(Error::SimulationDiverged { time: state.time })?;
        let sol = chol.solve(&fj);
        let mut acc = vec![0.0; ndof];
        acc[3..].copy_from_slice(sol.as_slice());
        acc
    } else {
        let chol = mass
            .cholesky()
            .ok_or(Error::SimulationDiverged { time: state.time })?;
        chol.solve(&force).as_slice().to_vec()
    };
    Ok(Accelerations {
        acc,
        torques,
        external_fx,
    })
}

#[derive(Debug, Clone)]
pub struct Accelerations {
    pub acc: Vec<f64>,
    pub torques: Vec<f64>,
    /// Net horizontal force from contacts.
    pub external_fx: f64,
}

/// One semi-implicit Euler step of length `dt`.
pub fn step(
    state: &SimState,
    pd_targets: &[f64],
    world: &World<'_>,
    dt: f64,
) -> Result<StepOutput> {
    let bodies = EffectiveBodies::new(world.model, world.config);
    step_with(state, pd_targets, world, &bodies, dt)
}

fn step_with(
    state: &SimState,
    pd_targets: &[f64],
    world: &World<'_>,
    bodies: &EffectiveBodies,
    dt: f64,
) -> Result<StepOutput> {
    if !(dt > 0.0) {
        return Err(Error::domain("dt must be positive"));
    }
    let nj = world.model.num_joints();
    if pd_targets.len() != nj {
        return Err(Error::shape(format!(
            "pd_targets has {} entries, expected {nj}",
            pd_targets.len()
        )));
    }
    let Accelerations {
        acc,
        torques,
        external_fx,
    } = accelerations(world, bodies, state, pd_targets)?;
    let mut next = state.clone();
    for j in 0..nj {
        next.qdot[j] += dt * acc[3 + j];
        next.q[j] += dt * next.qdot[j];
    }
    if !world.model.fixed_base {
        let momentum_target =
            horizontal_momentum(world.model, bodies, state) + dt * external_fx;
        next.base_vel[0] += dt * acc[0];
        next.base_vel[1] += dt * acc[1];
        next.base_pitch_rate += dt * acc[2];
        next.base_pos[1] += dt * next.base_vel[1];
        next.base_pitch += dt * next.base_pitch_rate;
        // Momentum is translation invariant, so x can be advanced after the
        // horizontal velocity is projected onto the exact contact impulse.
        let total_mass: f64 = bodies.mass.iter().sum();
        let residual = momentum_target - horizontal_momentum(world.model, bodies, &next);
        next.base_vel[0] += residual / total_mass;
        next.base_pos[0] += dt * next.base_vel[0];
    }
    let t0 = state.time;
    next.time = t0 + dt;
    if let Some(schedule) = &world.config.push {
        if !world.model.fixed_base {
            for push in schedule.pushes_between(t0, next.time) {
                next = apply_push(&next, &push);
            }
        }
    }
    if !next.is_finite() {
        return Err(Error::SimulationDiverged { time: next.time });
    }
    Ok(StepOutput {
        state: next,
        torques,
    })
}

/// Holds the PD targets for `substeps` integration steps (one control tick).
/// Returned torques are the per-joint mean over the substeps.
pub fn control_step(
    state: &SimState,
    pd_targets: &[f64],
    world: &World<'_>,
    dt: f64,
    substeps: usize,
) -> Result<StepOutput> {
    let bodies = EffectiveBodies::new(world.model, world.config);
    let nj = world.model.num_joints();
    let mut current = state.clone();
    let mut mean_tau = vec![0.0; nj];
    for _ in 0..substeps {
        let out = step_with(&current, pd_targets, world, &bodies, dt)?;
        for (m, t) in mean_tau.iter_mut().zip(&out.torques) {
            *m += t / substeps as f64;
        }
        current = out.state;
    }
    Ok(StepOutput {
        state: current,
        torques: mean_tau,
    })
}

/// Total horizontal linear momentum of all links, evaluated at the state's
/// configuration.
pub fn horizontal_momentum(model: &RobotModel, bodies: &EffectiveBodies, state: &SimState) -> f64 {
    let kin = Kinematics::new(model, state);
    (0..model.num_links())
        .map(|i| bodies.mass[i] * kin.point_velocity(i, bodies.com[i])[0])
        .sum()
}

/// Kinetic plus gravitational potential energy (contacts excluded).
pub fn mechanical_energy(model: &RobotModel, bodies: &EffectiveBodies, state: &SimState) -> f64 {
    let kin = Kinematics::new(model, state);
    let v = state.generalized_velocity();
    let mut e = 0.0;
    for i in 0..model.num_links() {
        let pj = kin.point_jacobian(model, i, bodies.com[i]);
        let vel = pj.velocity(&v);
        e += 0.5 * bodies.mass[i] * (vel[0] * vel[0] + vel[1] * vel[1]);
        e += 0.5 * bodies.inertia[i] * kin.rate[i] * kin.rate[i];
        e += bodies.mass[i] * model.gravity * pj.pos[1];
    }
    for (j, a) in bodies.armature.iter().enumerate() {
        e += 0.5 * a * state.qdot[j] * state.qdot[j];
    }
    e
}
