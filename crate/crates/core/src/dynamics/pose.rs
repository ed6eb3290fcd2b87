use nalgebra::{Quaternion, UnitQuaternion};

use crate::{Error, Result, Vec3};

/// Rigid head transform: `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse() * (p - self.translation)
    }

    /// Linear translation, spherical rotation. Returns the endpoints exactly at 0 and 1.
    pub fn interpolate(&self, other: &RigidPose, t: f64) -> RigidPose {
        if t <= 0.0 {
            return *self;
        }
        if t >= 1.0 {
            return *other;
        }
        let rotation = self
            .rotation
            .try_slerp(&other.rotation, t, 1e-12)
            .unwrap_or(self.rotation);
        RigidPose {
            rotation,
            translation: self.translation.lerp(&other.translation, t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseKey {
    pub time: f64,
    pub pose: RigidPose,
}

/// Keyframed rigid head motion.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    keys: Vec<PoseKey>,
}

impl PoseTrack {
    pub fn new(keys: Vec<PoseKey>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::invalid("pose track has no keyframes"));
        }
        for (i, w) in keys.windows(2).enumerate() {
            if !(w[1].time > w[0].time) {
                return Err(Error::invalid(format!(
                    "pose track times must strictly increase (keyframe {})",
                    i + 1
                )));
            }
        }
        for (i, k) in keys.iter().enumerate() {
            if !k.time.is_finite() || !k.pose.translation.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid(format!("non-finite keyframe {i}")));
            }
            if (k.pose.rotation.quaternion().norm() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("keyframe {i} quaternion is not unit length")));
            }
        }
        Ok(Self { keys })
    }

    /// A single identity keyframe at t = 0.
    pub fn identity() -> Self {
        Self {
            keys: vec![PoseKey {
                time: 0.0,
                pose: RigidPose::identity(),
            }],
        }
    }

    /// Builds a keyframe from raw `w x y z` quaternion components, normalizing
    /// inputs that are within 1e-6 of unit length.
    pub fn key_from_raw(time: f64, q: [f64; 4], t: [f64; 3]) -> Result<PoseKey> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "quaternion at t={time} has norm {norm}, expected 1"
            )));
        }
        Ok(PoseKey {
            time,
            // unit-length input is kept verbatim so text round-trips are exact
            pose: RigidPose::new(
                if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
                    UnitQuaternion::new_unchecked(quat)
                } else {
                    UnitQuaternion::from_quaternion(quat)
                },
                Vec3::from(t),
            ),
        })
    }

    pub fn keys(&self) -> &[PoseKey] {
        &self.keys
    }

    /// Pose at time `t`, held constant outside the keyed range.
    pub fn sample(&self, t: f64) -> RigidPose {
        let keys = &self.keys;
        if t <= keys[0].time {
            return keys[0].pose;
        }
        let last = keys.len() - 1;
        if t >= keys[last].time {
            return keys[last].pose;
        }
        let i = keys.partition_point(|k| k.time <= t) - 1;
        let (a, b) = (&keys[i], &keys[i + 1]);
        a.pose.interpolate(&b.pose, (t - a.time) / (b.time - a.time))
    }
}
