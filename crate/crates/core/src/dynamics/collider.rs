use nalgebra::{Matrix4, Vector4};

use super::RigidPose;
use crate::{Error, Result, Vec3};

/// Exact-center degeneracy pushes along +z.
const FALLBACK_PUSH: Vec3 = Vec3::new(0.0, 0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    /// head frame
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    /// head frame
    pub start: Vec3,
    pub end: Vec3,
    pub radius: f64,
}

/// Rigid colliders attached to the head.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColliderSet {
    pub spheres: Vec<Sphere>,
    pub capsules: Vec<Capsule>,
}

impl ColliderSet {
    pub fn new(spheres: Vec<Sphere>, capsules: Vec<Capsule>) -> Result<Self> {
        let set = Self { spheres, capsules };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let radii = self
            .spheres
            .iter()
            .map(|s| s.radius)
            .chain(self.capsules.iter().map(|c| c.radius));
        for r in radii {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::invalid(format!("collider radius must be > 0, got {r}")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.spheres.is_empty() && self.capsules.is_empty()
    }

    /// Colliders moved into world space by the head pose.
    pub fn posed(&self, pose: &RigidPose) -> ColliderSet {
        ColliderSet {
            spheres: self
                .spheres
                .iter()
                .map(|s| Sphere {
                    center: pose.apply(&s.center),
                    radius: s.radius,
                })
                .collect(),
            capsules: self
                .capsules
                .iter()
                .map(|c| Capsule {
                    start: pose.apply(&c.start),
                    end: pose.apply(&c.end),
                    radius: c.radius,
                })
                .collect(),
        }
    }

    /// Pushes `p` out of every collider it penetrates, in order.
    ///
    /// Returns the outward normal of the last contact, if any.
    pub fn project(&self, p: &mut Vec3) -> Option<Vec3> {
        let mut contact = None;
        for s in &self.spheres {
            if let Some(n) = push_out(p, &s.center, s.radius) {
                contact = Some(n);
            }
        }
        for c in &self.capsules {
            let axis = c.end - c.start;
            let len2 = axis.norm_squared();
            let t = if len2 > 0.0 {
                ((*p - c.start).dot(&axis) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let closest = c.start + axis * t;
            if let Some(n) = push_out(p, &closest, c.radius) {
                contact = Some(n);
            }
        }
        contact
    }
}

fn push_out(p: &mut Vec3, center: &Vec3, radius: f64) -> Option<Vec3> {
    let d = *p - center;
    let dist = d.norm();
    if dist >= radius {
        return None;
    }
    let n = if dist > 1e-12 { d / dist } else { FALLBACK_PUSH };
    *p = center + n * radius;
    Some(n)
}

/// Default head collider: least-squares sphere through the guide roots, shrunk
/// so every root sits on or outside it. Returns an empty set when the roots do
/// not determine a sphere.
pub fn fit_head_sphere(roots: &[Vec3]) -> ColliderSet {
    if roots.len() < 4 {
        return ColliderSet::default();
    }
    // |p|^2 = 2 c.p + (r^2 - |c|^2), solved in the least-squares sense
    let mut ata = Matrix4::<f64>::zeros();
    let mut atb = Vector4::<f64>::zeros();
    for p in roots {
        let row = Vector4::new(2.0 * p.x, 2.0 * p.y, 2.0 * p.z, 1.0);
        ata += row * row.transpose();
        atb += row * p.norm_squared();
    }
    let Some(sol) = ata.lu().solve(&atb) else {
        return ColliderSet::default();
    };
    let center = Vec3::new(sol[0], sol[1], sol[2]);
    let r2 = sol[3] + center.norm_squared();
    if !(r2 > 0.0) || !center.iter().all(|c| c.is_finite()) {
        return ColliderSet::default();
    }
    let nearest = roots
        .iter()
        .map(|p| (p - center).norm())
        .fold(f64::INFINITY, f64::min);
    let radius = 0.98 * r2.sqrt().min(nearest);
    if !(radius > 0.0) {
        return ColliderSet::default();
    }
    ColliderSet {
        spheres: vec![Sphere { center, radius }],
        capsules: vec![],
    }
}
