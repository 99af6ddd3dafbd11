//! Per-episode dynamics variation: terrain, pushes and physical properties.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::terrain::TerrainParams;

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        let v = rng.gen_range(self.lo..=self.hi);
        v.clamp(self.lo, self.hi)
    }

    pub fn check(&self, name: &str) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::config(format!("{name}: bounds must be finite")));
        }
        if self.lo > self.hi {
            return Err(Error::config(format!(
                "{name}: lo ({}) exceeds hi ({})",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Which disturbance families are active and the ranges they draw from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceRanges {
    pub terrain_enabled: bool,
    pub floor_friction: Range,
    pub max_terrain_height: f64,
    pub noise_scale: Range,
    pub noise_octaves: Range,
    pub noise_persistence: Range,
    pub noise_lacunarity: Range,

    pub forces_enabled: bool,
    pub push_interval: Range,
    pub push_velocity: Range,
    /// Time of the first push after an episode starts.
    pub first_push: Range,

    pub physical_enabled: bool,
    pub dof_friction_scale: Range,
    pub armature_scale: Range,
    pub torso_com_shift: Range,
    pub torso_mass_delta: Range,
    pub default_pose_jitter: Range,
}

impl Default for DisturbanceRanges {
    fn default() -> Self {
        DisturbanceRanges {
            terrain_enabled: true,
            floor_friction: Range::new(0.3, 2.0),
            max_terrain_height: 0.3,
            noise_scale: Range::new(10.0, 16.0),
            noise_octaves: Range::new(5.0, 8.0),
            noise_persistence: Range::new(0.3, 0.5),
            noise_lacunarity: Range::new(2.0, 4.0),
            forces_enabled: true,
            push_interval: Range::new(5.0, 10.0),
            push_velocity: Range::new(0.1, 1.0),
            first_push: Range::new(1.0, 3.0),
            physical_enabled: true,
            dof_friction_scale: Range::new(0.5, 2.0),
            armature_scale: Range::new(1.0, 1.05),
            torso_com_shift: Range::new(-0.15, 0.15),
            torso_mass_delta: Range::new(-3.0, 6.0),
            default_pose_jitter: Range::new(-0.05, 0.05),
        }
    }
}

impl DisturbanceRanges {
    pub fn none() -> Self {
        DisturbanceRanges {
            terrain_enabled: false,
            forces_enabled: false,
            physical_enabled: false,
            ..Default::default()
        }
    }

    pub fn only(terrain: bool, forces: bool, physical: bool) -> Self {
        DisturbanceRanges {
            terrain_enabled: terrain,
            forces_enabled: forces,
            physical_enabled: physical,
            ..Default::default()
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.terrain_enabled || self.forces_enabled || self.physical_enabled
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("floor_friction", &self.floor_friction),
            ("noise_scale", &self.noise_scale),
            ("noise_octaves", &self.noise_octaves),
            ("noise_persistence", &self.noise_persistence),
            ("noise_lacunarity", &self.noise_lacunarity),
            ("push_interval", &self.push_interval),
            ("push_velocity", &self.push_velocity),
            ("first_push", &self.first_push),
            ("dof_friction_scale", &self.dof_friction_scale),
            ("armature_scale", &self.armature_scale),
            ("torso_com_shift", &self.torso_com_shift),
            ("torso_mass_delta", &self.torso_mass_delta),
            ("default_pose_jitter", &self.default_pose_jitter),
        ] {
            r.check(name)?;
        }
        if !(self.max_terrain_height >= 0.0) {
            return Err(Error::config("max_terrain_height must be non-negative"));
        }
        if self.noise_octaves.lo < 1.0 {
            return Err(Error::config("noise_octaves: need at least one octave"));
        }
        if self.noise_scale.lo <= 0.0 {
            return Err(Error::config("noise_scale: must be positive"));
        }
        if self.push_interval.lo <= 0.0 {
            return Err(Error::config("push_interval: must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushSchedule {
    pub first_s: f64,
    pub interval_s: f64,
    pub velocity_magnitude: f64,
    /// Unit vector in the (x, z) plane.
    pub direction: [f64; 2],
}

impl PushSchedule {
    /// Pushes triggering in the half-open window `(t0, t1]`.
    pub fn pushes_between(&self, t0: f64, t1: f64) -> impl Iterator<Item = Push> + '_ {
        let first_k = if t0 < self.first_s {
            0
        } else {
            ((t0 - self.first_s) / self.interval_s).floor() as u64
        };
        (first_k..)
            .map(move |k| self.first_s + k as f64 * self.interval_s)
            .skip_while(move |&t| t <= t0)
            .take_while(move |&t| t <= t1)
            .map(move |t| Push {
                trigger_time: t,
                delta_base_vel: [
                    self.velocity_magnitude * self.direction[0],
                    self.velocity_magnitude * self.direction[1],
                ],
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Push {
    pub trigger_time: f64,
    pub delta_base_vel: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub floor_friction: f64,
    pub terrain: TerrainParams,
    pub push: Option<PushSchedule>,
    pub dof_friction_scale: f64,
    pub armature_scale: f64,
    /// Shift of the torso centre of mass along the body x axis.
    pub torso_com_shift: f64,
    pub torso_mass_delta: f64,
    /// Per-joint actuator zero offset.
    pub default_pose_jitter: Vec<f64>,
}

impl DynamicsConfig {
    pub fn nominal(num_joints: usize) -> Self {
        DynamicsConfig {
            floor_friction: 1.0,
            terrain: TerrainParams::flat(),
            push: None,
            dof_friction_scale: 1.0,
            armature_scale: 1.0,
            torso_com_shift: 0.0,
            torso_mass_delta: 0.0,
            default_pose_jitter: vec![0.0; num_joints],
        }
    }

    pub fn is_nominal(&self) -> bool {
        *self == Self::nominal(self.default_pose_jitter.len())
    }

    pub const FIXED_FIELDS: usize = 10;

    pub fn num_fields(num_joints: usize) -> usize {
        Self::FIXED_FIELDS + num_joints
    }

    /// Flat numeric view used by the privileged critic.
    pub fn flatten(&self) -> Vec<f64> {
        let (interval, magnitude, dir) = match &self.push {
            Some(p) => (p.interval_s, p.velocity_magnitude, p.direction),
            None => (0.0, 0.0, [0.0, 0.0]),
        };
        let mut out = vec![
            self.floor_friction,
            self.terrain.max_height,
            interval,
            magnitude,
            dir[0],
            dir[1],
            self.dof_friction_scale,
            self.armature_scale,
            self.torso_com_shift,
            self.torso_mass_delta,
        ];
        out.extend_from_slice(&self.default_pose_jitter);
        out
    }
}

pub fn sample_dynamics_config<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &DisturbanceRanges,
    num_joints: usize,
) -> Result<DynamicsConfig> {
    ranges.validate()?;
    let mut cfg = DynamicsConfig::nominal(num_joints);
    if ranges.terrain_enabled {
        cfg.floor_friction = ranges.floor_friction.sample(rng);
        cfg.terrain = TerrainParams {
            max_height: ranges.max_terrain_height,
            scale: ranges.noise_scale.sample(rng),
            octaves: ranges.noise_octaves.sample(rng).round() as u32,
            persistence: ranges.noise_persistence.sample(rng),
            lacunarity: ranges.noise_lacunarity.sample(rng),
            seed: rng.gen(),
        };
    }
    if ranges.forces_enabled {
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        cfg.push = Some(PushSchedule {
            interval_s: ranges.push_interval.sample(rng),
            velocity_magnitude: ranges.push_velocity.sample(rng),
            first_s: ranges.first_push.sample(rng),
            direction: [angle.cos(), angle.sin()],
        });
    }
    if ranges.physical_enabled {
        cfg.dof_friction_scale = ranges.dof_friction_scale.sample(rng);
        cfg.armature_scale = ranges.armature_scale.sample(rng);
        cfg.torso_com_shift = ranges.torso_com_shift.sample(rng);
        cfg.torso_mass_delta = ranges.torso_mass_delta.sample(rng);
        cfg.default_pose_jitter = (0..num_joints)
            .map(|_| ranges.default_pose_jitter.sample(rng))
            .collect();
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    type Field = Box<dyn Fn(&DynamicsConfig) -> f64>;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn disabled_families_give_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let cfg = sample_dynamics_config(&mut rng, &DisturbanceRanges::none(), 6).unwrap();
            assert!(cfg.is_nominal());
            assert_eq!(cfg.floor_friction, 1.0);
            assert_eq!(cfg.terrain.max_height, 0.0);
            assert!(cfg.push.is_none());
        }
    }

    #[test]
    fn table_ranges_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let ranges = DisturbanceRanges::default();
        let cfg = sample_dynamics_config(&mut rng, &ranges, 6).unwrap();
        assert!((0.3..=2.0).contains(&cfg.floor_friction));
        assert!((-3.0..=6.0).contains(&cfg.torso_mass_delta));
    }

    #[test]
    fn monte_carlo_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ranges = DisturbanceRanges::default();
        let n = 10_000;
        let samples: Vec<_> = (0..n)
            .map(|_| sample_dynamics_config(&mut rng, &ranges, 6).unwrap())
            .collect();
        let checks: Vec<(&str, Range, Field)> = vec![
            ("friction", ranges.floor_friction, Box::new(|c| c.floor_friction)),
            ("scale", ranges.noise_scale, Box::new(|c| c.terrain.scale)),
            ("persistence", ranges.noise_persistence, Box::new(|c| c.terrain.persistence)),
            ("lacunarity", ranges.noise_lacunarity, Box::new(|c| c.terrain.lacunarity)),
            ("interval", ranges.push_interval, Box::new(|c| c.push.unwrap().interval_s)),
            ("velocity", ranges.push_velocity, Box::new(|c| c.push.unwrap().velocity_magnitude)),
            ("dof_friction", ranges.dof_friction_scale, Box::new(|c| c.dof_friction_scale)),
            ("armature", ranges.armature_scale, Box::new(|c| c.armature_scale)),
            ("com", ranges.torso_com_shift, Box::new(|c| c.torso_com_shift)),
            ("mass", ranges.torso_mass_delta, Box::new(|c| c.torso_mass_delta)),
            ("jitter", ranges.default_pose_jitter, Box::new(|c| c.default_pose_jitter[2])),
        ];
        for (name, range, get) in checks {
            let vals: Vec<f64> = samples.iter().map(get).collect();
            assert!(vals.iter().all(|&v| range.contains(v)), "{name} out of range");
            let mean = vals.iter().sum::<f64>() / n as f64;
            // Standard error of the mean of U(lo, hi).
            let sigma = (range.hi - range.lo) / 12f64.sqrt() / (n as f64).sqrt();
            assert!(
                (mean - range.midpoint()).abs() < 3.0 * sigma,
                "{name}: mean {mean} vs midpoint {}",
                range.midpoint()
            );
        }
        for c in &samples {
            assert!((5..=8).contains(&c.terrain.octaves));
            let d = c.push.unwrap().direction;
            assert!((d[0].hypot(d[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn malformed_range_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ranges = DisturbanceRanges {
            torso_mass_delta: Range::new(6.0, -3.0),
            ..Default::default()
        };
        let err = sample_dynamics_config(&mut rng, &ranges, 6).unwrap_err();
        assert!(err.to_string().contains("torso_mass_delta"));
    }

    #[test]
    fn push_windows() {
        let s = PushSchedule {
            first_s: 1.0,
            interval_s: 5.0,
            velocity_magnitude: 0.5,
            direction: [1.0, 0.0],
        };
        let hits: Vec<f64> = s.pushes_between(0.0, 12.0).map(|p| p.trigger_time).collect();
        assert_eq!(hits, vec![1.0, 6.0, 11.0]);
        assert_eq!(s.pushes_between(0.998, 1.0).count(), 1);
        assert_eq!(s.pushes_between(1.0, 1.002).count(), 0);
        assert_eq!(s.pushes_between(6.5, 7.0).count(), 0);
    }

    #[test]
    fn flatten_length() {
        let cfg = DynamicsConfig::nominal(6);
        assert_eq!(cfg.flatten().len(), DynamicsConfig::num_fields(6));
    }
}
