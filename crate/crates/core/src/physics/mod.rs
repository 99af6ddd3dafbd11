//! Deterministic planar biped simulator.

pub mod dynamics;
pub mod model;
pub mod observe;
pub mod sim;
pub mod terrain;

pub use dynamics::{sample_dynamics_config, DisturbanceRanges, DynamicsConfig, Push, PushSchedule, Range};
pub use model::{ContactPoint, JointSpec, LinkSpec, RobotModel};
pub use observe::{observe, privileged_observe, Observation, PrivilegedObservation};
pub use sim::{
    apply_push, contact_force, control_step, pd_torque, step, ContactParams, Kinematics, SimState,
    StepOutput, World, CONTROL_DECIMATION, SIM_DT,
};
pub use terrain::{fractal_terrain, perlin1, terrain_height, Terrain, TerrainParams};
