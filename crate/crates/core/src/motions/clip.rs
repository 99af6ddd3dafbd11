//! Parametric reference motions with analytic velocities.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{Kinematics, RobotModel, SimState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Stand,
    Lean,
    Squat,
    Walk,
    Hop,
    Kick,
}

impl MotionKind {
    pub const ALL: [MotionKind; 6] = [
        MotionKind::Stand,
        MotionKind::Lean,
        MotionKind::Squat,
        MotionKind::Walk,
        MotionKind::Hop,
        MotionKind::Kick,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::Stand => "stand",
            MotionKind::Lean => "lean",
            MotionKind::Squat => "squat",
            MotionKind::Walk => "walk",
            MotionKind::Hop => "hop",
            MotionKind::Kick => "kick",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::config(format!("unknown motion kind {name:?}")))
    }
}

impl std::fmt::Display for MotionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Shape parameters; their meaning depends on the kind.
///
/// `amplitude` is the main joint excursion (rad), `frequency` the cycle rate
/// (Hz), `phase` the cycle offset (rad) and `aux` a secondary excursion
/// (walk: swing knee flexion; kick: torso counter-lean ratio).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionParams {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub aux: f64,
}

impl MotionParams {
    pub fn zero() -> Self {
        MotionParams {
            amplitude: 0.0,
            frequency: 0.0,
            phase: 0.0,
            aux: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionLabel {
    pub kind: MotionKind,
    pub params: MotionParams,
    pub seed: u64,
}

/// One reference frame. Link quantities use link centres of mass; positions
/// are relative to the base origin with world-aligned axes, velocities are
/// absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFrame {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub base_x: f64,
    pub base_height: f64,
    pub base_vel: [f64; 2],
    pub pitch: f64,
    pub pitch_rate: f64,
    pub link_pos: Vec<[f64; 2]>,
    pub link_vel: Vec<[f64; 2]>,
    pub link_angle: Vec<f64>,
    pub link_rate: Vec<f64>,
    pub feet_height: Vec<f64>,
}

impl MotionFrame {
    pub fn lerp(&self, other: &MotionFrame, t: f64) -> MotionFrame {
        let s = |a: f64, b: f64| a + t * (b - a);
        let v = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| s(*x, *y)).collect();
        let p = |a: &[[f64; 2]], b: &[[f64; 2]]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| [s(x[0], y[0]), s(x[1], y[1])])
                .collect()
        };
        MotionFrame {
            q: v(&self.q, &other.q),
            qdot: v(&self.qdot, &other.qdot),
            base_x: s(self.base_x, other.base_x),
            base_height: s(self.base_height, other.base_height),
            base_vel: [
                s(self.base_vel[0], other.base_vel[0]),
                s(self.base_vel[1], other.base_vel[1]),
            ],
            pitch: s(self.pitch, other.pitch),
            pitch_rate: s(self.pitch_rate, other.pitch_rate),
            link_pos: p(&self.link_pos, &other.link_pos),
            link_vel: p(&self.link_vel, &other.link_vel),
            link_angle: v(&self.link_angle, &other.link_angle),
            link_rate: v(&self.link_rate, &other.link_rate),
            feet_height: v(&self.feet_height, &other.feet_height),
        }
    }

    pub fn is_finite(&self) -> bool {
        let scalars = [self.base_x, self.base_height, self.pitch, self.pitch_rate];
        scalars.iter().all(|v| v.is_finite())
            && self.base_vel.iter().all(|v| v.is_finite())
            && self
                .q
                .iter()
                .chain(&self.qdot)
                .chain(&self.link_angle)
                .chain(&self.link_rate)
                .chain(&self.feet_height)
                .all(|v| v.is_finite())
            && self
                .link_pos
                .iter()
                .chain(&self.link_vel)
                .all(|p| p[0].is_finite() && p[1].is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    pub fps: f64,
    pub label: MotionLabel,
    pub frames: Vec<MotionFrame>,
}

impl MotionClip {
    pub fn duration(&self) -> f64 {
        (self.frames.len() - 1) as f64 / self.fps
    }

    pub fn kind(&self) -> MotionKind {
        self.label.kind
    }
}

/// Per-step tracking target taken from a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingGoal {
    pub time: f64,
    pub frame: MotionFrame,
}

/// Value and time derivative carried together.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dual(f64, f64);

impl Dual {
    fn c(v: f64) -> Self {
        Dual(v, 0.0)
    }
    fn sin(self) -> Self {
        Dual(self.0.sin(), self.1 * self.0.cos())
    }
    fn cos(self) -> Self {
        Dual(self.0.cos(), -self.1 * self.0.sin())
    }
    /// `max(0, x)²`, continuously differentiable.
    fn pos_sq(self) -> Self {
        if self.0 > 0.0 {
            Dual(self.0 * self.0, 2.0 * self.0 * self.1)
        } else {
            Dual(0.0, 0.0)
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual(self.0 + o.0, self.1 + o.1)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual(self.0 - o.0, self.1 - o.1)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual(self.0 * o.0, self.0 * o.1 + self.1 * o.0)
    }
}

impl Mul<Dual> for f64 {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual(self * o.0, self * o.1)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual(-self.0, -self.1)
    }
}

/// Torso pitch and joint angles (with rates) at time `t`, for the biped layout
/// `[hip, knee, ankle] × (left, right)`.
fn pose(kind: MotionKind, p: &MotionParams, default: &[f64], t: f64) -> (Dual, Vec<Dual>) {
    let (h0, k0, a0) = (Dual::c(default[0]), Dual::c(default[1]), Dual::c(default[2]));
    let (h0r, k0r, a0r) = (Dual::c(default[3]), Dual::c(default[4]), Dual::c(default[5]));
    let omega = 2.0 * std::f64::consts::PI * p.frequency;
    let theta = Dual(omega * t + p.phase, omega);
    let a = p.amplitude;
    let zero = Dual::c(0.0);
    match kind {
        MotionKind::Stand => (zero, vec![h0, k0, a0, h0r, k0r, a0r]),
        MotionKind::Lean => {
            // Thighs keep their absolute angle so the feet stay flat.
            let pitch = a * theta.sin();
            (pitch, vec![h0 - pitch, k0, a0, h0r - pitch, k0r, a0r])
        }
        MotionKind::Squat | MotionKind::Hop => {
            let bend = a * (Dual::c(1.0) - theta.cos());
            let half = 0.5 * bend;
            (
                zero,
                vec![h0 - half, k0 + bend, a0 - half, h0r - half, k0r + bend, a0r - half],
            )
        }
        MotionKind::Walk => {
            let c = theta.cos();
            let s = theta.sin();
            let hip_l = h0 + a * c;
            let hip_r = h0r - a * c;
            let knee_l = k0 + p.aux * s.pos_sq();
            let knee_r = k0r + p.aux * (-s).pos_sq();
            let ankle_l = -(hip_l + knee_l);
            let ankle_r = -(hip_r + knee_r);
            (zero, vec![hip_l, knee_l, ankle_l, hip_r, knee_r, ankle_r])
        }
        MotionKind::Kick => {
            let bump = (0.5 * (Dual::c(1.0) - theta.cos())).pos_sq();
            let pitch = -(p.aux * a) * bump;
            let hip_l = h0 - pitch - a * bump;
            let knee_l = k0 + (0.5 * a) * bump;
            (pitch, vec![hip_l, knee_l, a0, h0r - pitch, k0r, a0r])
        }
    }
}

fn check_params(kind: MotionKind, p: &MotionParams, model: &RobotModel) -> Result<()> {
    let vals = [p.amplitude, p.frequency, p.phase, p.aux];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("motion parameters must be finite"));
    }
    if kind != MotionKind::Stand && (p.amplitude < 0.0 || p.frequency <= 0.0) {
        return Err(Error::config(format!(
            "{kind}: amplitude must be >= 0 and frequency > 0"
        )));
    }
    if model.num_joints() != 6 {
        return Err(Error::config("motion generators expect the 6-joint biped layout"));
    }
    Ok(())
}

fn frame_at(
    kind: MotionKind,
    params: &MotionParams,
    model: &RobotModel,
    t: f64,
) -> Result<MotionFrame> {
    let (pitch, joints) = pose(kind, params, &model.default_pose, t);
    let q: Vec<f64> = joints.iter().map(|d| d.0).collect();
    let qdot: Vec<f64> = joints.iter().map(|d| d.1).collect();
    for (j, joint) in model.joints.iter().enumerate() {
        if q[j] < joint.limit_lo || q[j] > joint.limit_hi {
            return Err(Error::config(format!(
                "{kind}: joint {} reaches {:.3} rad outside [{}, {}]",
                joint.name, q[j], joint.limit_lo, joint.limit_hi
            )));
        }
    }
    let state = SimState {
        base_pos: [0.0, 0.0],
        base_pitch: pitch.0,
        base_vel: [0.0, 0.0],
        base_pitch_rate: pitch.1,
        q: q.clone(),
        qdot: qdot.clone(),
        time: t,
        last_action: vec![0.0; q.len()],
    };
    let kin = Kinematics::new(model, &state);
    // The lowest contact point is the stance point: it rests on the ground
    // and does not slide, which fixes base height and base velocity.
    let mut stance = 0;
    let mut lowest = f64::INFINITY;
    for (i, c) in model.contacts.iter().enumerate() {
        let z = kin.point(c.link, c.offset)[1];
        if z < lowest - 1e-12 {
            lowest = z;
            stance = i;
        }
    }
    let base_height = -lowest;
    let sc = model.contacts[stance];
    let sv = kin.point_velocity(sc.link, sc.offset);
    let base_vel = [-sv[0], -sv[1]];
    let n = model.num_links();
    let mut link_pos = Vec::with_capacity(n);
    let mut link_vel = Vec::with_capacity(n);
    for (i, link) in model.links.iter().enumerate() {
        link_pos.push(kin.point(i, link.com_offset));
        let v = kin.point_velocity(i, link.com_offset);
        link_vel.push([v[0] + base_vel[0], v[1] + base_vel[1]]);
    }
    let feet_height = model
        .feet
        .iter()
        .map(|&f| {
            model
                .contacts
                .iter()
                .filter(|c| c.link == f)
                .map(|c| kin.point(c.link, c.offset)[1] + base_height)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(MotionFrame {
        q,
        qdot,
        base_x: 0.0,
        base_height,
        base_vel,
        pitch: pitch.0,
        pitch_rate: pitch.1,
        link_pos,
        link_vel,
        link_angle: kin.angle.clone(),
        link_rate: kin.rate.clone(),
        feet_height,
    })
}

/// Samples a clip at `fps` over `[0, duration]`.
///
/// `seed` only labels the clip: every generator is deterministic in its parameters.
pub fn generate_clip(
    model: &RobotModel,
    kind: MotionKind,
    params: &MotionParams,
    duration: f64,
    fps: f64,
    seed: u64,
) -> Result<MotionClip> {
    if !(duration > 0.0) || !(fps > 0.0) || !duration.is_finite() || !fps.is_finite() {
        return Err(Error::config("clip duration and fps must be positive"));
    }
    check_params(kind, params, model)?;
    let n = (duration * fps).round() as usize + 1;
    let mut frames = Vec::with_capacity(n);
    let mut x = 0.0;
    for k in 0..n {
        let mut f = frame_at(kind, params, model, k as f64 / fps)?;
        if let Some(prev) = frames.last() {
            let prev: &MotionFrame = prev;
            x += 0.5 * (prev.base_vel[0] + f.base_vel[0]) / fps;
        }
        f.base_x = x;
        frames.push(f);
    }
    Ok(MotionClip {
        fps,
        label: MotionLabel {
            kind,
            params: *params,
            seed,
        },
        frames,
    })
}

/// Reference at time `t`; exact on frames, linear between, held after the end.
pub fn clip_goal(clip: &MotionClip, t: f64) -> Result<TrackingGoal> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("goal time {t} is negative")));
    }
    let u = t * clip.fps;
    let last = clip.frames.len() - 1;
    let frame = if u >= last as f64 {
        clip.frames[last].clone()
    } else {
        let k = u.floor() as usize;
        let s = u - k as f64;
        if s == 0.0 {
            clip.frames[k].clone()
        } else {
            clip.frames[k].lerp(&clip.frames[k + 1], s)
        }
    };
    Ok(TrackingGoal { time: t, frame })
}
