//! Strand-based hair toolkit.
//!
//! Guide strands are simulated with a semi-implicit Euler particle integrator and a
//! Gauss–Seidel constraint solver, transferred to a dense groom by inverse-distance
//! skinning, and rendered as one elongated Gaussian per strand segment. Strand colors
//! are fitted against masked target images with a neighbor color-consistency term,
//! and animations can be scored for rigidity in PCA space.

pub mod appearance;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod metrics;
pub mod skinning;
pub mod splat;
pub mod strand;

pub use error::{Error, Result};

/// 3-vector in meters (or rgb for colors).
pub type Vec3 = nalgebra::Vector3<f64>;
