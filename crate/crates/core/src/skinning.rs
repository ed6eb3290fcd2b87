//! Sparse-to-dense motion transfer.
//!
//! Every dense strand follows its `k` nearest guides (by root distance at rest)
//! with normalized inverse-distance weights `w = 1 / (d + eps)`. Only relative
//! motion is transferred: each frame adds the weighted guide displacement since
//! the previous frame to the previous dense frame. Guide and dense strands are
//! matched point-to-point by normalized arc parameter.

use rayon::prelude::*;

use crate::strand::{knn_roots, Groom};
use crate::{Error, Result, Vec3};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// A sequence of guide grooms sampled every `frame_dt` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideAnimation {
    pub frames: Vec<Groom>,
    pub frame_dt: f64,
}

impl GuideAnimation {
    pub fn new(frames: Vec<Groom>, frame_dt: f64) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::invalid("animation has no frames"));
        };
        if let Some(i) = frames.iter().position(|f| !f.same_shape(first)) {
            return Err(Error::invalid(format!(
                "frame {i} shape differs from frame 0"
            )));
        }
        Ok(Self { frames, frame_dt })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn rest(&self) -> &Groom {
        &self.frames[0]
    }
}

/// Guide influences for every dense strand.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinningMap {
    pub k: usize,
    pub epsilon: f64,
    /// `dense_count * k` guide indices, nearest first
    pub indices: Vec<u32>,
    /// `dense_count * k` normalized weights
    pub weights: Vec<f64>,
    /// arc parameter `u_j = j / (points - 1)` of each dense point
    pub arc_params: Vec<f64>,
}

impl SkinningMap {
    pub fn dense_count(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn influences(&self, dense: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = dense * self.k..(dense + 1) * self.k;
        self.indices[r.clone()]
            .iter()
            .zip(&self.weights[r])
            .map(|(&i, &w)| (i as usize, w))
    }
}

/// Normalized inverse-distance weights for a list of neighbor distances.
pub fn inverse_distance_weights(distances: &[f64], epsilon: f64) -> Vec<f64> {
    let raw: Vec<f64> = distances.iter().map(|d| 1.0 / (d + epsilon)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn build_skinning(dense: &Groom, guides: &Groom, k: usize, epsilon: f64) -> Result<SkinningMap> {
    if guides.strand_count() == 0 {
        return Err(Error::invalid("empty guide set"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    let neighbors = knn_roots(dense, guides, k)?;
    let mut indices = Vec::with_capacity(neighbors.len() * k);
    let mut weights = Vec::with_capacity(neighbors.len() * k);
    for list in &neighbors {
        let d: Vec<f64> = list.iter().map(|n| n.distance).collect();
        indices.extend(list.iter().map(|n| n.index as u32));
        weights.extend(inverse_distance_weights(&d, epsilon));
    }
    let n = dense.points_per_strand();
    Ok(SkinningMap {
        k,
        epsilon,
        indices,
        weights,
        arc_params: (0..n).map(|j| j as f64 / (n - 1) as f64).collect(),
    })
}

/// Segment index and blend factor locating arc parameter `u` on a strand of
/// `points` uniformly spaced points.
fn locate(u: f64, points: usize) -> (usize, f64) {
    let s = u.clamp(0.0, 1.0) * (points - 1) as f64;
    let i = (s.floor() as usize).min(points - 2);
    (i, s - i as f64)
}

fn sample(strand: &[Vec3], at: (usize, f64)) -> Vec3 {
    let (i, f) = at;
    strand[i] + (strand[i + 1] - strand[i]) * f
}

/// Dense frames `D_t = D_{t-1} + sum_j w_j (S_t(j) - S_{t-1}(j))`, with `D_0 = dense_rest`.
pub fn apply_skinning(map: &SkinningMap, anim: &GuideAnimation, dense_rest: &Groom) -> Result<Vec<Groom>> {
    if map.dense_count() != dense_rest.strand_count() {
        return Err(Error::invalid(format!(
            "skinning map covers {} dense strands, rest groom has {}",
            map.dense_count(),
            dense_rest.strand_count()
        )));
    }
    if map.arc_params.len() != dense_rest.points_per_strand() {
        return Err(Error::invalid(format!(
            "skinning map has {} arc parameters, dense strands have {} points",
            map.arc_params.len(),
            dense_rest.points_per_strand()
        )));
    }
    let guide_count = anim.rest().strand_count();
    if let Some(&bad) = map.indices.iter().find(|&&i| i as usize >= guide_count) {
        return Err(Error::invalid(format!(
            "frame 0: skinning map references guide {bad}, animation has {guide_count}"
        )));
    }

    let guide_points = anim.rest().points_per_strand();
    let slots: Vec<(usize, f64)> = map.arc_params.iter().map(|&u| locate(u, guide_points)).collect();
    let n = dense_rest.points_per_strand();

    let mut out = Vec::with_capacity(anim.frame_count());
    out.push(dense_rest.clone());
    for t in 1..anim.frame_count() {
        let (prev, cur) = (&anim.frames[t - 1], &anim.frames[t]);
        if !cur.same_shape(anim.rest()) {
            return Err(Error::invalid(format!("frame {t}: guide shape mismatch")));
        }
        // displacement of every guide at every dense arc slot
        let disp: Vec<Vec3> = (0..guide_count)
            .into_par_iter()
            .flat_map_iter(|g| {
                let (a, b) = (prev.strand(g), cur.strand(g));
                slots.iter().map(move |&at| sample(b, at) - sample(a, at))
            })
            .collect();

        let last = out.last().expect("frame 0 is always present");
        let mut points = last.points().to_vec();
        points.par_chunks_mut(n).enumerate().for_each(|(d, strand)| {
            for (j, p) in strand.iter_mut().enumerate() {
                let mut delta = Vec3::zeros();
                for (g, w) in map.influences(d) {
                    delta += disp[g * n + j] * w;
                }
                *p += delta;
            }
        });
        out.push(Groom::new(points, n)?);
    }
    Ok(out)
}
