//! Forward-only CPU Gaussian splatting.
//!
//! Primitives are projected with the linearized perspective Jacobian
//! (`cov2d = J R Σ Rᵀ Jᵀ`), sorted globally by camera depth, and composited
//! front to back per pixel. Pixel `(i, j)` is sampled at image coordinates
//! `(i, j)`. The renderer can also emit, per pixel, the compositing weight of
//! every contributing splat; since the image is linear in splat colors, this
//! map gives exact color gradients.

use nalgebra::{Matrix2, Matrix3, Matrix2x3, UnitQuaternion, Vector2};
use rayon::prelude::*;

use crate::appearance::{strand_gaussians, GaussianPrimitive, StrandColors};
use crate::strand::Groom;
use crate::{Error, Result, Vec3};

pub const NEAR_PLANE: f64 = 0.01;
pub const COV2D_FLOOR: f64 = 1e-6;
pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Coverage cutoff in squared Mahalanobis distance (3 sigma).
const COVERAGE: f64 = 9.0;
/// Rows per compositing band; bands are composited independently.
const BAND: usize = 16;

/// Pinhole camera, world to camera `x_c = R x_w + t`, with x right, y down, z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// pixels
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        focal: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vec3,
    ) -> Result<Self> {
        let cam = Self {
            focal,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::invalid(format!("focal length must be > 0, got {}", self.focal)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be non-zero"));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if !(err <= 1e-9) {
            return Err(Error::invalid(format!(
                "camera rotation is not orthonormal (error {err:e})"
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite() && self.translation.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("camera parameters must be finite"));
        }
        Ok(())
    }

    /// Camera placed at `eye` looking at `target`, with image-down roughly along `-up`.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Exact perspective projection of a camera-space point.
    pub fn project_point(&self, pc: &Vec3) -> Vector2<f64> {
        Vector2::new(
            self.focal * pc.x / pc.z + self.cx,
            self.focal * pc.y / pc.z + self.cy,
        )
    }
}

/// Projected Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub depth: f64,
    pub color: Vec3,
    pub opacity: f64,
    /// index of the source primitive
    pub source: usize,
}

/// `Σ = R S Sᵀ Rᵀ`.
pub fn covariance3d(scale: &Vec3, rotation: &UnitQuaternion<f64>) -> Matrix3<f64> {
    let r = rotation.to_rotation_matrix().into_inner();
    let rs = Matrix3::from_columns(&[
        r.column(0) * scale.x,
        r.column(1) * scale.y,
        r.column(2) * scale.z,
    ]);
    rs * rs.transpose()
}

/// Linearized projection Jacobian at camera-space point `pc`.
pub fn projection_jacobian(focal: f64, pc: &Vec3) -> Matrix2x3<f64> {
    let (x, y, z) = (pc.x, pc.y, pc.z);
    Matrix2x3::new(
        focal / z,
        0.0,
        -focal * x / (z * z),
        0.0,
        focal / z,
        -focal * y / (z * z),
    )
}

/// Projects one primitive; `None` when it lies at or behind the near plane.
pub fn project_gaussian(primitive: &GaussianPrimitive, camera: &Camera, source: usize) -> Option<Splat2D> {
    let pc = camera.to_camera(&primitive.mean);
    if pc.z <= NEAR_PLANE {
        return None;
    }
    let sigma = covariance3d(&primitive.scale, &primitive.rotation);
    let sigma_cam = camera.rotation * sigma * camera.rotation.transpose();
    let j = projection_jacobian(camera.focal, &pc);
    let cov = j * sigma_cam * j.transpose() + Matrix2::identity() * COV2D_FLOOR;
    Some(Splat2D {
        mean: camera.project_point(&pc),
        cov,
        depth: pc.z,
        color: primitive.color,
        opacity: primitive.opacity,
        source,
    })
}

/// Linear rgb image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vec3>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: Vec3) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Vec3 {
        self.pixels[y * self.width + x]
    }
}

/// Per-pixel compositing weights `w = α_i Π_{j<i}(1 - α_j)`, keyed by splat source
/// index, plus the final transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub width: usize,
    pub height: usize,
    /// CSR row starts, one row per pixel
    pub starts: Vec<usize>,
    pub entries: Vec<(u32, f64)>,
    pub transmittance: Vec<f64>,
}

impl WeightMap {
    pub fn pixel(&self, index: usize) -> &[(u32, f64)] {
        &self.entries[self.starts[index]..self.starts[index + 1]]
    }

    /// Image `C = Σ w c + T · background` for the given per-source colors.
    pub fn reconstruct(&self, colors: &[Vec3], background: Vec3) -> Image {
        let pixels = (0..self.width * self.height)
            .map(|p| {
                let mut c = Vec3::zeros();
                for &(s, w) in self.pixel(p) {
                    c += colors[s as usize] * w;
                }
                c + background * self.transmittance[p]
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            pixels,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RasterStats {
    pub splats: usize,
    /// splats dropped for a singular or non-finite covariance
    pub skipped: usize,
}

struct Prepared {
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    bbox: [i64; 4],
    color: Vec3,
    opacity: f64,
    source: u32,
}

fn prepare(splats: &[Splat2D], width: usize, height: usize) -> (Vec<Prepared>, usize) {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(a.cmp(&b)));

    let mut skipped = 0;
    let mut out = Vec::with_capacity(splats.len());
    for i in order {
        let s = &splats[i];
        let det = s.cov.determinant();
        let finite = s.cov.iter().chain(s.mean.iter()).all(|c| c.is_finite());
        if !finite || !(det > COV2D_FLOOR * COV2D_FLOOR * 0.5) || s.cov[(0, 0)] <= 0.0 {
            skipped += 1;
            continue;
        }
        let conic = Matrix2::new(s.cov[(1, 1)], -s.cov[(0, 1)], -s.cov[(1, 0)], s.cov[(0, 0)]) / det;
        let rx = (COVERAGE * s.cov[(0, 0)]).sqrt();
        let ry = (COVERAGE * s.cov[(1, 1)]).sqrt();
        let bbox = [
            (s.mean.x - rx).ceil() as i64,
            (s.mean.y - ry).ceil() as i64,
            (s.mean.x + rx).floor() as i64,
            (s.mean.y + ry).floor() as i64,
        ];
        if bbox[2] < 0 || bbox[3] < 0 || bbox[0] >= width as i64 || bbox[1] >= height as i64 {
            continue;
        }
        out.push(Prepared {
            mean: s.mean,
            conic,
            bbox,
            color: s.color,
            opacity: s.opacity,
            source: s.source as u32,
        });
    }
    (out, skipped)
}

struct TileOut {
    colors: Vec<Vec3>,
    transmittance: Vec<f64>,
    starts: Vec<usize>,
    entries: Vec<(u32, f64)>,
}

fn composite_band(
    prepared: &[Prepared],
    list: &[u32],
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    background: Vec3,
    weights: bool,
) -> TileOut {
    let w = x1 - x0;
    let count = w * (y1 - y0);
    let mut colors = vec![Vec3::zeros(); count];
    let mut transmittance = vec![1.0; count];
    let mut done = vec![false; count];
    let mut pixel_entries: Vec<Vec<(u32, f64)>> = if weights { vec![Vec::new(); count] } else { Vec::new() };
    let mut active = count;

    // splat-major in depth order: every pixel still sees its splats front to back
    for &id in list {
        if active == 0 {
            break;
        }
        let s = &prepared[id as usize];
        let ya = s.bbox[1].max(y0 as i64);
        let yb = s.bbox[3].min(y1 as i64 - 1);
        let (a, b, c) = (s.conic[(0, 0)], 0.5 * (s.conic[(0, 1)] + s.conic[(1, 0)]), s.conic[(1, 1)]);
        for py in ya..=yb {
            let dy = py as f64 - s.mean.y;
            // x-interval where a dx² + 2 b dx dy + c dy² <= COVERAGE; the margin covers
            // rounding, the exact test below decides
            let disc = b * b * dy * dy - a * (c * dy * dy - COVERAGE);
            if !(disc >= 0.0) {
                continue;
            }
            let root = disc.sqrt();
            let lo = s.mean.x + (-b * dy - root) / a;
            let hi = s.mean.x + (-b * dy + root) / a;
            let xa = ((lo - 1e-6).ceil() as i64).max(s.bbox[0]).max(x0 as i64);
            let xb = ((hi + 1e-6).floor() as i64).min(s.bbox[2]).min(x1 as i64 - 1);
            let row = (py as usize - y0) * w;
            for px in xa..=xb {
                let local = row + (px as usize - x0);
                if done[local] {
                    continue;
                }
                let d = Vector2::new(px as f64, py as f64) - s.mean;
                let q = d.dot(&(s.conic * d));
                if !(q <= COVERAGE) {
                    continue;
                }
                let alpha = (s.opacity * (-0.5 * q).exp()).min(MAX_ALPHA);
                if alpha <= 0.0 {
                    continue;
                }
                let t = transmittance[local];
                let wgt = alpha * t;
                colors[local] += s.color * wgt;
                if weights {
                    pixel_entries[local].push((s.source, wgt));
                }
                let t = t * (1.0 - alpha);
                transmittance[local] = t;
                if t < MIN_TRANSMITTANCE {
                    done[local] = true;
                    active -= 1;
                }
            }
        }
    }

    let mut out = TileOut {
        colors: Vec::with_capacity(count),
        transmittance,
        starts: Vec::with_capacity(count + 1),
        entries: Vec::new(),
    };
    out.starts.push(0);
    for (i, c) in colors.into_iter().enumerate() {
        out.colors.push(c + background * out.transmittance[i]);
        if weights {
            out.entries.append(&mut pixel_entries[i]);
        }
        out.starts.push(out.entries.len());
    }
    out
}

fn composite(
    splats: &[Splat2D],
    width: usize,
    height: usize,
    background: Vec3,
    weights: bool,
) -> (Image, Option<WeightMap>, RasterStats) {
    let (prepared, skipped) = prepare(splats, width, height);
    let bands = height.div_ceil(BAND);

    // splats are pushed in depth order, so each band list stays sorted
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); bands];
    for (id, s) in prepared.iter().enumerate() {
        let b0 = (s.bbox[1].max(0) as usize) / BAND;
        let b1 = (s.bbox[3].min(height as i64 - 1) as usize) / BAND;
        for list in &mut bins[b0..=b1] {
            list.push(id as u32);
        }
    }

    let parts: Vec<TileOut> = bins
        .par_iter()
        .enumerate()
        .map(|(band, list)| {
            let y0 = band * BAND;
            composite_band(&prepared, list, 0, y0, width, (y0 + BAND).min(height), background, weights)
        })
        .collect();

    // bands are consecutive row ranges, so the merge is a concatenation
    let mut image = Image::filled(width, height, background);
    image.pixels.clear();
    let mut transmittance = Vec::with_capacity(width * height);
    let mut starts = Vec::with_capacity(width * height + 1);
    let mut entries = Vec::new();
    starts.push(0);
    for part in parts {
        image.pixels.extend(part.colors);
        transmittance.extend(part.transmittance);
        if weights {
            let offset = entries.len();
            starts.extend(part.starts[1..].iter().map(|s| s + offset));
            entries.extend(part.entries);
        }
    }
    let map = weights.then(|| WeightMap {
        width,
        height,
        starts,
        entries,
        transmittance,
    });
    let stats = RasterStats {
        splats: prepared.len(),
        skipped,
    };
    (image, map, stats)
}

/// Composites projected splats into an image of the camera's size.
pub fn rasterize(splats: &[Splat2D], camera: &Camera, background: Vec3) -> (Image, RasterStats) {
    let (image, _, stats) = composite(splats, camera.width, camera.height, background, false);
    (image, stats)
}

/// [`rasterize`] that also returns the per-pixel weight map.
pub fn rasterize_with_weights(splats: &[Splat2D], camera: &Camera, background: Vec3) -> (Image, WeightMap, RasterStats) {
    let (image, map, stats) = composite(splats, camera.width, camera.height, background, true);
    (image, map.expect("weights requested"), stats)
}

/// Projects primitives, dropping culled ones.
pub fn project_all(primitives: &[GaussianPrimitive], camera: &Camera) -> Vec<Splat2D> {
    primitives
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| project_gaussian(p, camera, i))
        .collect()
}

/// Renders primitives and returns the per-pixel weight map keyed by primitive index.
pub fn render_primitives(
    primitives: &[GaussianPrimitive],
    camera: &Camera,
    background: Vec3,
) -> (Image, WeightMap, RasterStats) {
    rasterize_with_weights(&project_all(primitives, camera), camera, background)
}

/// Result of rendering a colored groom.
#[derive(Debug, Clone)]
pub struct GroomRender {
    pub image: Image,
    pub weights: WeightMap,
    /// `(strand, segment)` of every primitive index used in `weights`
    pub segments: Vec<(u32, u32)>,
    pub stats: RasterStats,
}

/// Builds strand Gaussians and renders them with weights.
pub fn render_groom(groom: &Groom, colors: &StrandColors, camera: &Camera, background: Vec3) -> Result<GroomRender> {
    camera.validate()?;
    let gaussians = strand_gaussians(groom, colors)?;
    let (image, weights, stats) = render_primitives(&gaussians.primitives, camera, background);
    Ok(GroomRender {
        image,
        weights,
        segments: gaussians.segments,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(mean: Vec3, sigma: f64, color: Vec3) -> GaussianPrimitive {
        GaussianPrimitive {
            mean,
            scale: Vec3::repeat(sigma),
            rotation: UnitQuaternion::identity(),
            opacity: 1.0,
            color,
            sh: None,
        }
    }

    fn camera(f: f64, size: usize) -> Camera {
        Camera::new(
            f,
            size as f64 / 2.0,
            size as f64 / 2.0,
            size,
            size,
            Matrix3::identity(),
            Vec3::zeros(),
        )
        .unwrap()
    }

    #[test]
    fn covariance_examples() {
        let c = covariance3d(&Vec3::new(1.0, 2.0, 3.0), &UnitQuaternion::identity());
        assert!((c - Matrix3::from_diagonal(&Vec3::new(1.0, 4.0, 9.0))).abs().max() < 1e-15);
        let q = UnitQuaternion::from_euler_angles(0.4, -1.1, 2.0);
        let c = covariance3d(&Vec3::repeat(0.3), &q);
        assert!((c - Matrix3::identity() * 0.09).abs().max() < 1e-12);
    }

    #[test]
    fn on_axis_projection() {
        let cam = camera(100.0, 64);
        let s = project_gaussian(&iso(Vec3::new(0.0, 0.0, 2.0), 0.1, Vec3::zeros()), &cam, 0).unwrap();
        assert!((s.mean - Vector2::new(32.0, 32.0)).norm() < 1e-12);
        let expect = Matrix2::identity() * (25.0 + COV2D_FLOOR);
        assert!((s.cov - expect).abs().max() < 1e-12);
        assert!(project_gaussian(&iso(Vec3::new(0.0, 0.0, -1.0), 0.1, Vec3::zeros()), &cam, 0).is_none());
    }

    #[test]
    fn doubling_focal_scales_projection() {
        let g = GaussianPrimitive {
            mean: Vec3::new(0.1, -0.05, 1.5),
            scale: Vec3::new(0.02, 0.01, 0.005),
            rotation: UnitQuaternion::from_euler_angles(0.3, 0.2, 0.1),
            opacity: 1.0,
            color: Vec3::zeros(),
            sh: None,
        };
        let a = project_gaussian(&g, &camera(100.0, 64), 0).unwrap();
        let b = project_gaussian(&g, &camera(200.0, 64), 0).unwrap();
        let c = Vector2::new(32.0, 32.0);
        assert!(((b.mean - c) - (a.mean - c) * 2.0).norm() < 1e-12);
        let floor = Matrix2::identity() * COV2D_FLOOR;
        assert!(((b.cov - floor) - (a.cov - floor) * 4.0).abs().max() < 1e-12);
    }

    #[test]
    fn empty_scene_is_background() {
        let bg = Vec3::new(0.1, 0.2, 0.3);
        let (img, stats) = rasterize(&[], &camera(100.0, 8), bg);
        assert!(img.pixels.iter().all(|p| *p == bg));
        assert_eq!(stats.splats, 0);
    }

    #[test]
    fn single_opaque_splat_hits_alpha_clamp() {
        let cam = camera(100.0, 64);
        let bg = Vec3::new(0.2, 0.4, 0.6);
        let color = Vec3::new(1.0, 0.5, 0.0);
        let splats = project_all(&[iso(Vec3::new(0.0, 0.0, 2.0), 0.1, color)], &cam);
        let (img, _) = rasterize(&splats, &cam, bg);
        let want = color * 0.99 + bg * 0.01;
        assert!((img.get(32, 32) - want).norm() < 1e-6);
    }

    #[test]
    fn singular_covariance_is_skipped() {
        let cam = camera(100.0, 16);
        let s = Splat2D {
            mean: Vector2::new(8.0, 8.0),
            cov: Matrix2::zeros(),
            depth: 1.0,
            color: Vec3::x(),
            opacity: 1.0,
            source: 0,
        };
        let (img, stats) = rasterize(&[s], &cam, Vec3::zeros());
        assert_eq!(stats.skipped, 1);
        assert!(img.pixels.iter().all(|p| *p == Vec3::zeros()));
    }

    #[test]
    fn weight_partition_of_unity() {
        let cam = camera(80.0, 40);
        let prims: Vec<GaussianPrimitive> = (0..6)
            .map(|i| {
                iso(
                    Vec3::new(0.02 * i as f64 - 0.05, 0.01 * i as f64, 1.0 + 0.1 * i as f64),
                    0.03,
                    Vec3::new(0.1 * i as f64, 0.5, 1.0),
                )
            })
            .collect();
        let (img, map, _) = render_primitives(&prims, &cam, Vec3::new(0.3, 0.3, 0.3));
        for p in 0..40 * 40 {
            let sum: f64 = map.pixel(p).iter().map(|e| e.1).sum();
            assert!((sum + map.transmittance[p] - 1.0).abs() < 1e-9);
        }
        let colors: Vec<Vec3> = prims.iter().map(|p| p.color).collect();
        let rebuilt = map.reconstruct(&colors, Vec3::new(0.3, 0.3, 0.3));
        for (a, b) in rebuilt.pixels.iter().zip(&img.pixels) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn camera_validation() {
        assert!(Camera::new(0.0, 0.0, 0.0, 4, 4, Matrix3::identity(), Vec3::zeros()).is_err());
        assert!(Camera::new(1.0, 0.0, 0.0, 4, 4, Matrix3::identity() * 2.0, Vec3::zeros()).is_err());
        let cam = Camera::look_at(Vec3::new(0.0, -1.0, 0.0), Vec3::zeros(), Vec3::z(), 100.0, 32, 32).unwrap();
        let pc = cam.to_camera(&Vec3::zeros());
        assert!((pc - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        // world up maps to image up (negative y)
        assert!(cam.to_camera(&Vec3::new(0.0, 0.0, 0.1)).y < 0.0);
    }
}
