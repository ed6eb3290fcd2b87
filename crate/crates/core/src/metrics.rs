//! Rigidity metrics over animations.
//!
//! Frames are samples and flattened particle positions are features. PCA runs
//! on the time-centered motion matrix through whichever Gram matrix is smaller
//! (`T×T` or `3P×3P`). Zero-variance input has PC1 = 100% by convention.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::skinning::GuideAnimation;
use crate::strand::Groom;
use crate::{Error, Result};

pub const DEFAULT_COMPONENTS: usize = 3;

/// `T × 3P` flattened positions, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMatrix {
    pub data: DMatrix<f64>,
    pub frame_times: Vec<f64>,
}

impl MotionMatrix {
    pub fn new(data: DMatrix<f64>, frame_times: Vec<f64>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::invalid(format!(
                "motion analysis needs at least 2 frames, got {}",
                data.nrows()
            )));
        }
        if data.ncols() == 0 || data.ncols() % 3 != 0 {
            return Err(Error::invalid(format!(
                "motion rows must hold xyz triples, got {} columns",
                data.ncols()
            )));
        }
        if frame_times.len() != data.nrows() {
            return Err(Error::invalid("one frame time per row required"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("motion matrix has non-finite entries"));
        }
        Ok(Self { data, frame_times })
    }

    pub fn from_frames(frames: &[Groom], frame_dt: f64) -> Result<Self> {
        let cols = frames.first().map_or(0, |f| f.points().len() * 3);
        if let Some(i) = frames.iter().position(|f| f.points().len() * 3 != cols) {
            return Err(Error::invalid(format!("frame {i} particle count differs from frame 0")));
        }
        let data = DMatrix::from_fn(frames.len(), cols, |t, c| frames[t].points()[c / 3][c % 3]);
        Self::new(data, (0..frames.len()).map(|t| t as f64 * frame_dt).collect())
    }

    pub fn from_animation(anim: &GuideAnimation) -> Result<Self> {
        Self::from_frames(&anim.frames, anim.frame_dt)
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn particles(&self) -> usize {
        self.data.ncols() / 3
    }
}

/// Principal components of a motion matrix.
#[derive(Debug, Clone)]
pub struct Pca {
    /// descending, clipped at 0
    pub eigenvalues: Vec<f64>,
    /// `T × K` projections of the centered frames onto the components
    pub projections: DMatrix<f64>,
}

pub fn pca(motion: &MotionMatrix) -> Pca {
    let x = centered(&motion.data);
    let (t, d) = x.shape();
    let (eigenvalues, projections) = if t <= d {
        let gram = &x * x.transpose();
        let (vals, vecs) = sorted_eigen(gram);
        // X = U S Vᵀ, so the projections X V are U S
        let proj = DMatrix::from_fn(t, vals.len(), |r, k| vecs[(r, k)] * vals[k].sqrt());
        (vals, proj)
    } else {
        let cov = x.transpose() * &x;
        let (vals, vecs) = sorted_eigen(cov);
        (vals, &x * vecs)
    };
    Pca {
        eigenvalues,
        projections,
    }
}

fn centered(data: &DMatrix<f64>) -> DMatrix<f64> {
    // subtracting the first frame makes identical frames exactly zero
    let first = data.row(0).clone_owned();
    let mut x = data.clone();
    for mut row in x.row_iter_mut() {
        row -= &first;
    }
    let mean = x.row_mean();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    x
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if m.iter().all(|&v| v == 0.0) {
        return (vec![0.0; n], DMatrix::identity(n, n));
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vecs = DMatrix::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (vals, vecs)
}

/// Explained variance of every component, in percent.
pub fn explained_variance(motion: &MotionMatrix) -> Vec<f64> {
    ratios(&pca(motion).eigenvalues)
}

fn ratios(eigenvalues: &[f64]) -> Vec<f64> {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        let mut out = vec![0.0; eigenvalues.len()];
        out[0] = 100.0;
        return out;
    }
    eigenvalues.iter().map(|l| 100.0 * l / total).collect()
}

pub fn explained_variance_pc1(motion: &MotionMatrix) -> f64 {
    explained_variance(motion)[0]
}

/// Mean frame-to-frame distance in the top-`components` PCA subspace, over `√P`.
pub fn temporal_smoothness(motion: &MotionMatrix, components: usize) -> Result<f64> {
    Ok(smoothness(&pca(motion), components, motion.particles())?)
}

fn smoothness(p: &Pca, components: usize, particles: usize) -> Result<f64> {
    if components == 0 {
        return Err(Error::invalid("components must be >= 1"));
    }
    let k = components.min(p.projections.ncols());
    let z = p.projections.columns(0, k);
    let t = z.nrows();
    let total: f64 = (1..t).map(|i| (z.row(i) - z.row(i - 1)).norm()).sum();
    Ok(total / (t - 1) as f64 / (particles as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcTracks {
    pub times: Vec<f64>,
    /// `[frame][component]` projections
    pub projections: Vec<Vec<f64>>,
    /// `[frame][component]` std-dev of the projections over frames `0..=frame`
    pub running_std: Vec<Vec<f64>>,
}

pub fn pc_std_tracks(motion: &MotionMatrix, components: usize) -> Result<PcTracks> {
    if components == 0 {
        return Err(Error::invalid("components must be >= 1"));
    }
    let p = pca(motion);
    Ok(tracks(&p, &motion.frame_times, components))
}

fn tracks(p: &Pca, times: &[f64], components: usize) -> PcTracks {
    let k = components.min(p.projections.ncols());
    let t = p.projections.nrows();
    let projections: Vec<Vec<f64>> = (0..t)
        .map(|i| (0..k).map(|c| p.projections[(i, c)]).collect())
        .collect();
    let mut running_std = Vec::with_capacity(t);
    let (mut sum, mut sum_sq) = (vec![0.0; k], vec![0.0; k]);
    for (i, row) in projections.iter().enumerate() {
        let n = (i + 1) as f64;
        running_std.push(
            row.iter()
                .enumerate()
                .map(|(c, &v)| {
                    sum[c] += v;
                    sum_sq[c] += v * v;
                    let mean = sum[c] / n;
                    (sum_sq[c] / n - mean * mean).max(0.0).sqrt()
                })
                .collect(),
        );
    }
    PcTracks {
        times: times.to_vec(),
        projections,
        running_std,
    }
}

/// All metrics from one decomposition.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub pc1_percent: f64,
    pub ts: f64,
    pub components: usize,
    pub explained: Vec<f64>,
    pub tracks: PcTracks,
}

pub fn analyze(motion: &MotionMatrix, components: usize) -> Result<MetricsReport> {
    if components == 0 {
        return Err(Error::invalid("components must be >= 1"));
    }
    let p = pca(motion);
    let explained = ratios(&p.eigenvalues);
    Ok(MetricsReport {
        pc1_percent: explained[0],
        ts: smoothness(&p, components, motion.particles())?,
        components,
        tracks: tracks(&p, &motion.frame_times, components),
        explained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    fn translating(speed: f64, frames: usize) -> MotionMatrix {
        let base = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.1, 0.3, -0.2), Vec3::new(0.5, 0.2, 0.1)];
        let d = Vec3::new(0.3, -0.1, 0.2) * speed;
        let grooms: Vec<Groom> = (0..frames)
            .map(|t| Groom::new(base.iter().map(|p| p + d * t as f64).collect(), 3).unwrap())
            .collect();
        MotionMatrix::from_frames(&grooms, 0.1).unwrap()
    }

    #[test]
    fn static_motion() {
        let data = DMatrix::from_fn(5, 6, |_, c| c as f64 * 0.37 + 0.1);
        let m = MotionMatrix::new(data, vec![0.0; 5]).unwrap();
        let r = analyze(&m, 3).unwrap();
        assert_eq!(r.ts, 0.0);
        assert_eq!(r.pc1_percent, 100.0);
        assert!(r.tracks.running_std.iter().flatten().all(|&s| s == 0.0));
    }

    #[test]
    fn translation_is_rank_one() {
        let m = translating(1.0, 8);
        assert!((explained_variance_pc1(&m) - 100.0).abs() < 1e-6);
        let ts = temporal_smoothness(&m, 3).unwrap();
        // every step moves each of the 3 points by d
        let step = Vec3::new(0.3, -0.1, 0.2).norm() * 3f64.sqrt() / 3f64.sqrt();
        assert!((ts - step).abs() < 1e-9);
        let ts2 = temporal_smoothness(&translating(2.0, 8), 3).unwrap();
        assert!((ts2 - 2.0 * ts).abs() < 1e-9);
    }

    #[test]
    fn too_few_frames() {
        assert!(MotionMatrix::new(DMatrix::zeros(1, 3), vec![0.0]).is_err());
    }

    #[test]
    fn both_gram_paths_agree() {
        // 4 frames x 6 features, and 8 frames x 3 features
        let wide = DMatrix::from_fn(4, 6, |r, c| ((r * 7 + c * 3) % 5) as f64 + 0.1 * (r * c) as f64);
        let tall = DMatrix::from_fn(8, 3, |r, c| ((r * 5 + c * 2) % 7) as f64 - 0.2 * r as f64);
        for data in [wide, tall] {
            let t = data.nrows();
            let m = MotionMatrix::new(data.clone(), vec![0.0; t]).unwrap();
            let p = pca(&m);
            let x = centered(&data);
            let total: f64 = x.iter().map(|v| v * v).sum();
            let sum: f64 = p.eigenvalues.iter().sum();
            assert!((total - sum).abs() < 1e-9 * total.max(1.0));
            let ev = explained_variance(&m);
            assert!((ev.iter().sum::<f64>() - 100.0).abs() < 1e-6);
        }
    }
}
