//! Guide-strand physics.
//!
//! Each substep pins the roots to the moving head, integrates gravity, wind, air
//! drag and the start-curve attraction with semi-implicit Euler, resolves
//! inter-strand contacts, runs the iterative constraint solver and rewrites
//! velocities from the corrected positions.

mod collider;
mod params;
mod pose;
pub mod self_collision;
mod sim;

pub use collider::{fit_head_sphere, Capsule, ColliderSet, Sphere};
pub use params::{projection_factor, HairParams, SimConfig, Wind, RESISTANCE_SATURATION};
pub use pose::{PoseKey, PoseTrack, RigidPose};
pub use self_collision::resolve_self_collisions;
pub use sim::{
    init_sim, rigid_animation, self_collisions, simulate, solve_constraints,
    solve_constraints_logged, step, SimState,
};
