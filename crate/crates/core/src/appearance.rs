//! Segment Gaussians and strand color optimization.
//!
//! Every strand segment becomes one elongated Gaussian: centered at the segment
//! midpoint, stretched along the tangent, `SEGMENT_THICKNESS` wide in the other
//! two axes, oriented by the segment's TNB frame. Colors are fitted against
//! target images with a masked L1 loss, and a neighbor consistency term spreads
//! colors from observed strands into hidden ones.

use log::warn;
use nalgebra::{Rotation3, UnitQuaternion};
use rayon::prelude::*;

use crate::splat::{render_groom, Camera, Image};
use crate::strand::{knn_roots, tnb_frames, Groom};
use crate::{Error, Result, Vec3};

pub const SEGMENT_THICKNESS: f64 = 1e-4;
pub const DEFAULT_GRAPH_K: usize = 5;
/// Four SH bands times three channels.
pub const SH_COEFFICIENTS: usize = 48;
/// Fraction of iterations fitted photometrically before consistency is added.
pub const DEFAULT_PHASE_FRACTION: f64 = 3.0 / 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub mean: Vec3,
    pub scale: Vec3,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub color: Vec3,
    /// Explicit SH block. `None` stands for band 0 = color and all higher bands zero,
    /// which is what every hair primitive carries; see [`GaussianPrimitive::sh_block`].
    pub sh: Option<Box<[f64; SH_COEFFICIENTS]>>,
}

impl GaussianPrimitive {
    /// Full SH coefficients, channel-interleaved per coefficient (`[r0 g0 b0 r1 ...]`).
    pub fn sh_block(&self) -> [f64; SH_COEFFICIENTS] {
        match &self.sh {
            Some(block) => **block,
            None => {
                let mut block = [0.0; SH_COEFFICIENTS];
                block[..3].copy_from_slice(self.color.as_slice());
                block
            }
        }
    }
}

/// Per-segment rgb colors, strand-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StrandColors {
    values: Vec<Vec3>,
    segments_per_strand: usize,
}

impl StrandColors {
    /// Colors restricted to `[0, 1]`.
    pub fn new(values: Vec<Vec3>, segments_per_strand: usize) -> Result<Self> {
        let colors = Self::unbounded(values, segments_per_strand)?;
        if let Some(i) = colors
            .values
            .iter()
            .position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::invalid(format!(
                "strand {} segment {}: color {:?} outside [0, 1]",
                i / segments_per_strand,
                i % segments_per_strand,
                colors.values[i].as_slice()
            )));
        }
        Ok(colors)
    }

    /// Colors with only a finiteness check, for optimizer intermediates.
    pub fn unbounded(values: Vec<Vec3>, segments_per_strand: usize) -> Result<Self> {
        if segments_per_strand == 0 || values.len() % segments_per_strand != 0 {
            return Err(Error::invalid(format!(
                "{} colors do not split into strands of {segments_per_strand} segments",
                values.len()
            )));
        }
        if values.iter().any(|c| !c.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("non-finite color"));
        }
        Ok(Self {
            values,
            segments_per_strand,
        })
    }

    pub fn uniform(strands: usize, segments_per_strand: usize, color: Vec3) -> Self {
        Self {
            values: vec![color; strands * segments_per_strand],
            segments_per_strand: segments_per_strand.max(1),
        }
    }

    pub fn for_groom(groom: &Groom, color: Vec3) -> Self {
        Self::uniform(groom.strand_count(), groom.segments_per_strand(), color)
    }

    pub fn strand_count(&self) -> usize {
        self.values.len() / self.segments_per_strand
    }

    pub fn segments_per_strand(&self) -> usize {
        self.segments_per_strand
    }

    pub fn strand(&self, i: usize) -> &[Vec3] {
        &self.values[i * self.segments_per_strand..(i + 1) * self.segments_per_strand]
    }

    pub fn strand_mut(&mut self, i: usize) -> &mut [Vec3] {
        &mut self.values[i * self.segments_per_strand..(i + 1) * self.segments_per_strand]
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vec3] {
        &mut self.values
    }

    pub fn matches(&self, groom: &Groom) -> bool {
        self.strand_count() == groom.strand_count()
            && self.segments_per_strand == groom.segments_per_strand()
    }

    pub fn clamped(mut self) -> Self {
        for c in &mut self.values {
            *c = c.map(|v| v.clamp(0.0, 1.0));
        }
        self
    }
}

/// Directed neighbor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct StrandGraph {
    neighbors: Vec<Vec<u32>>,
}

impl StrandGraph {
    pub fn from_neighbors(neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter().enumerate() {
            if let Some(&j) = list.iter().find(|&&j| j == i || j >= n) {
                return Err(Error::invalid(format!(
                    "strand {i}: invalid neighbor {j} (self-loop or out of range for {n} strands)"
                )));
            }
        }
        Ok(Self {
            neighbors: neighbors
                .into_iter()
                .map(|l| l.into_iter().map(|j| j as u32).collect())
                .collect(),
        })
    }

    /// `k` nearest strands by root distance, excluding the strand itself.
    pub fn build(groom: &Groom, k: usize) -> Result<Self> {
        let n = groom.strand_count();
        let k_eff = k.min(n.saturating_sub(1));
        if k_eff < k {
            warn!("strand graph: only {n} strands, using {k_eff} neighbors instead of {k}");
        }
        if k_eff == 0 {
            return Ok(Self {
                neighbors: vec![Vec::new(); n],
            });
        }
        let knn = knn_roots(groom, groom, k_eff + 1)?;
        let neighbors = knn
            .into_iter()
            .enumerate()
            .map(|(i, list)| {
                list.into_iter()
                    .filter(|nb| nb.index != i)
                    .take(k_eff)
                    .map(|nb| nb.index as u32)
                    .collect()
            })
            .collect();
        Ok(Self { neighbors })
    }

    pub fn strand_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[i].iter().map(|&j| j as usize)
    }

    /// Out-degree plus in-degree of every strand.
    pub fn symmetric_degrees(&self) -> Vec<usize> {
        let mut deg: Vec<usize> = self.neighbors.iter().map(Vec::len).collect();
        for list in &self.neighbors {
            for &j in list {
                deg[j as usize] += 1;
            }
        }
        deg
    }

    /// Largest step for which gradient descent on the consistency loss provably
    /// never increases it: `1 / (4 · max(out + in degree))`.
    pub fn max_stable_step(&self) -> f64 {
        let d = self.symmetric_degrees().into_iter().max().unwrap_or(0);
        if d == 0 {
            f64::INFINITY
        } else {
            1.0 / (4.0 * d as f64)
        }
    }
}

/// Primitives built from a groom, with the `(strand, segment)` each came from.
#[derive(Debug, Clone)]
pub struct StrandGaussians {
    pub primitives: Vec<GaussianPrimitive>,
    pub segments: Vec<(u32, u32)>,
    pub skipped_strands: Vec<usize>,
}

fn segment_primitive(p1: &Vec3, p2: &Vec3, rotation: &nalgebra::Matrix3<f64>, color: Vec3) -> GaussianPrimitive {
    let rot = Rotation3::from_matrix_unchecked(*rotation);
    GaussianPrimitive {
        mean: (p1 + p2) * 0.5,
        scale: Vec3::new((p2 - p1).norm(), SEGMENT_THICKNESS, SEGMENT_THICKNESS),
        rotation: UnitQuaternion::from_rotation_matrix(&rot),
        opacity: 1.0,
        color,
        sh: None,
    }
}

/// One primitive per non-zero-length segment; degenerate strands are skipped with a warning.
pub fn strand_gaussians(groom: &Groom, colors: &StrandColors) -> Result<StrandGaussians> {
    if !colors.matches(groom) {
        return Err(Error::invalid(format!(
            "colors cover {} strands x {} segments, groom has {} x {}",
            colors.strand_count(),
            colors.segments_per_strand(),
            groom.strand_count(),
            groom.segments_per_strand()
        )));
    }
    let per_strand: Vec<Option<Vec<(u32, GaussianPrimitive)>>> = groom
        .strands()
        .collect::<Vec<_>>()
        .par_iter()
        .enumerate()
        .map(|(s, pts)| {
            let frames = tnb_frames(pts).ok()?;
            let c = colors.strand(s);
            Some(
                frames
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| pts[j + 1] != pts[*j] && (pts[j + 1] - pts[*j]).norm() > 0.0)
                    .map(|(j, f)| (j as u32, segment_primitive(&pts[j], &pts[j + 1], &f.rotation(), c[j])))
                    .collect(),
            )
        })
        .collect();

    let mut out = StrandGaussians {
        primitives: Vec::new(),
        segments: Vec::new(),
        skipped_strands: Vec::new(),
    };
    for (s, prims) in per_strand.into_iter().enumerate() {
        match prims {
            None => out.skipped_strands.push(s),
            Some(list) => {
                for (j, p) in list {
                    out.segments.push((s as u32, j));
                    out.primitives.push(p);
                }
            }
        }
    }
    if !out.skipped_strands.is_empty() {
        warn!("skipped degenerate strands {:?}", out.skipped_strands);
    }
    Ok(out)
}

fn check_graph(colors: &StrandColors, graph: &StrandGraph) -> Result<()> {
    if colors.strand_count() != graph.strand_count() {
        return Err(Error::invalid(format!(
            "colors cover {} strands, graph has {}",
            colors.strand_count(),
            graph.strand_count()
        )));
    }
    Ok(())
}

/// `Σ_i Σ_{j ∈ N(i)} ‖c_i − c_j‖²`, every stored directed pair counted once.
pub fn consistency_loss(colors: &StrandColors, graph: &StrandGraph) -> Result<f64> {
    check_graph(colors, graph)?;
    let partial: Vec<f64> = (0..graph.strand_count())
        .into_par_iter()
        .map(|i| {
            let ci = colors.strand(i);
            graph
                .neighbors(i)
                .map(|j| {
                    ci.iter()
                        .zip(colors.strand(j))
                        .map(|(a, b)| (a - b).norm_squared())
                        .sum::<f64>()
                })
                .sum()
        })
        .collect();
    Ok(partial.iter().sum())
}

/// Gradient of [`consistency_loss`] with respect to every color.
pub fn consistency_gradient(colors: &StrandColors, graph: &StrandGraph) -> Result<Vec<Vec3>> {
    check_graph(colors, graph)?;
    let segs = colors.segments_per_strand();
    let mut grad = vec![Vec3::zeros(); colors.values().len()];
    for i in 0..graph.strand_count() {
        for j in graph.neighbors(i) {
            for s in 0..segs {
                let d = (colors.strand(i)[s] - colors.strand(j)[s]) * 2.0;
                grad[i * segs + s] += d;
                grad[j * segs + s] -= d;
            }
        }
    }
    Ok(grad)
}

/// Gradient descent on the consistency loss, moving only strands not in `fixed`.
pub fn diffuse_colors(
    colors: &StrandColors,
    graph: &StrandGraph,
    fixed: &[bool],
    steps: usize,
    step_size: f64,
) -> Result<StrandColors> {
    check_graph(colors, graph)?;
    if fixed.len() != colors.strand_count() {
        return Err(Error::invalid(format!(
            "fixed mask has {} entries for {} strands",
            fixed.len(),
            colors.strand_count()
        )));
    }
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::invalid(format!("step size must be > 0, got {step_size}")));
    }
    if step_size > graph.max_stable_step() {
        warn!(
            "step size {step_size} exceeds the stable bound {}; the loss may increase",
            graph.max_stable_step()
        );
    }
    if !fixed.iter().any(|&f| f) {
        warn!("no fixed strands: colors converge to each component's mean");
    }
    let segs = colors.segments_per_strand();
    let mut current = colors.clone();
    for _ in 0..steps {
        let grad = consistency_gradient(&current, graph)?;
        for (idx, (c, g)) in current.values_mut().iter_mut().zip(&grad).enumerate() {
            if !fixed[idx / segs] {
                *c -= g * step_size;
            }
        }
    }
    Ok(current.clamped())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub lambda_consistency: f64,
    pub iterations: usize,
    pub phase_fraction: f64,
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub graph_k: usize,
    pub initial_color: Vec3,
    pub background: Vec3,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            lambda_consistency: 0.01,
            iterations: 1000,
            phase_fraction: DEFAULT_PHASE_FRACTION,
            learning_rate: 0.05,
            final_learning_rate: 1e-4,
            graph_k: DEFAULT_GRAPH_K,
            initial_color: Vec3::repeat(0.5),
            background: Vec3::zeros(),
        }
    }
}

impl FitSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("final_learning_rate", self.final_learning_rate)?;
        if !(self.lambda_consistency >= 0.0 && self.lambda_consistency.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda_consistency must be >= 0, got {}",
                self.lambda_consistency
            )));
        }
        if !(0.0..=1.0).contains(&self.phase_fraction) {
            return Err(Error::invalid(format!(
                "phase_fraction must lie in [0, 1], got {}",
                self.phase_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitLogEntry {
    pub iter: usize,
    pub loss_rgb: f64,
    pub loss_consistency: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub colors: StrandColors,
    pub log: Vec<FitLogEntry>,
}

/// Masked pixels of one camera with their compositing weights resolved to color indices.
struct View {
    /// `(start, mask, target, background contribution)` per masked pixel
    pixels: Vec<(usize, f64, Vec3, Vec3)>,
    /// `(color index, weight)`, pixel ranges delimited by `pixels[i].0`
    entries: Vec<(usize, f64)>,
}

impl View {
    fn range(&self, i: usize) -> &[(usize, f64)] {
        let end = self.pixels.get(i + 1).map_or(self.entries.len(), |p| p.0);
        &self.entries[self.pixels[i].0..end]
    }

    /// Masked residual `(I_rend − I_gt) · M` of pixel `i`.
    fn residual(&self, i: usize, colors: &[Vec3]) -> Vec3 {
        let (_, m, target, base) = self.pixels[i];
        let rendered = self.range(i).iter().fold(base, |acc, &(c, w)| acc + colors[c] * w);
        (rendered - target) * m
    }
}

/// Frozen-geometry photometric problem: one weight map per camera.
pub struct ColorProblem {
    views: Vec<View>,
    graph: StrandGraph,
    strands: usize,
    segments: usize,
}

impl ColorProblem {
    pub fn new(
        groom: &Groom,
        cameras: &[Camera],
        targets: &[Image],
        masks: &[Vec<f64>],
        graph_k: usize,
        background: Vec3,
    ) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::invalid("color fitting needs at least one camera"));
        }
        if targets.len() != cameras.len() || masks.len() != cameras.len() {
            return Err(Error::invalid(format!(
                "{} cameras, {} target images, {} masks",
                cameras.len(),
                targets.len(),
                masks.len()
            )));
        }
        for (i, ((cam, img), mask)) in cameras.iter().zip(targets).zip(masks).enumerate() {
            if img.width != cam.width || img.height != cam.height || mask.len() != img.pixels.len() {
                return Err(Error::invalid(format!(
                    "camera {i}: image {}x{} / mask {} do not match camera {}x{}",
                    img.width,
                    img.height,
                    mask.len(),
                    cam.width,
                    cam.height
                )));
            }
            if let Some(p) = mask.iter().position(|m| !m.is_finite() || *m < 0.0) {
                return Err(Error::invalid(format!("camera {i}: mask value at pixel {p} must be >= 0")));
            }
        }
        let probe = StrandColors::for_groom(groom, Vec3::zeros());
        let segments = groom.segments_per_strand();
        let mut views = Vec::with_capacity(cameras.len());
        for ((cam, img), mask) in cameras.iter().zip(targets).zip(masks) {
            let render = render_groom(groom, &probe, cam, background)?;
            let color_index: Vec<usize> = render
                .segments
                .iter()
                .map(|&(s, j)| s as usize * segments + j as usize)
                .collect();
            let mut view = View {
                pixels: Vec::new(),
                entries: Vec::new(),
            };
            for (p, &m) in mask.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                let base = background * render.weights.transmittance[p];
                view.pixels.push((view.entries.len(), m, img.pixels[p], base));
                view.entries.extend(
                    render
                        .weights
                        .pixel(p)
                        .iter()
                        .map(|&(prim, w)| (color_index[prim as usize], w)),
                );
            }
            views.push(view);
        }
        Ok(Self {
            views,
            graph: StrandGraph::build(groom, graph_k)?,
            strands: groom.strand_count(),
            segments,
        })
    }

    pub fn graph(&self) -> &StrandGraph {
        &self.graph
    }

    pub fn has_observations(&self) -> bool {
        self.views.iter().any(|v| !v.pixels.is_empty())
    }

    /// Segments (by color index) carrying nonzero weight on some masked pixel.
    pub fn observed_segments(&self) -> Vec<bool> {
        let mut seen = vec![false; self.strands * self.segments];
        for view in &self.views {
            for &(c, w) in &view.entries {
                if w > 0.0 {
                    seen[c] = true;
                }
            }
        }
        seen
    }

    /// Strands with at least one observed segment.
    pub fn observed_strands(&self) -> Vec<bool> {
        self.observed_segments()
            .chunks(self.segments.max(1))
            .map(|s| s.iter().any(|&o| o))
            .collect()
    }

    fn check(&self, colors: &StrandColors) -> Result<()> {
        if colors.strand_count() != self.strands || colors.segments_per_strand() != self.segments {
            return Err(Error::invalid(format!(
                "colors cover {}x{} segments, problem has {}x{}",
                colors.strand_count(),
                colors.segments_per_strand(),
                self.strands,
                self.segments
            )));
        }
        Ok(())
    }

    /// `(L_rgb, L_consistency)`.
    pub fn loss(&self, colors: &StrandColors) -> Result<(f64, f64)> {
        self.check(colors)?;
        let c = colors.values();
        let rgb: f64 = self
            .views
            .par_iter()
            .map(|v| (0..v.pixels.len()).map(|i| v.residual(i, c).abs().sum()).sum::<f64>())
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        Ok((rgb, consistency_loss(colors, &self.graph)?))
    }

    /// Gradient of `L_rgb + lambda · L_consistency`.
    pub fn gradient(&self, colors: &StrandColors, lambda: f64) -> Result<Vec<Vec3>> {
        self.check(colors)?;
        let c = colors.values();
        let n = c.len();
        let per_view: Vec<Vec<Vec3>> = self
            .views
            .par_iter()
            .map(|v| {
                let mut g = vec![Vec3::zeros(); n];
                for i in 0..v.pixels.len() {
                    let r = v.residual(i, c);
                    // subgradient of |x| is taken as 0 at x = 0
                    let s = r.map(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }) * v.pixels[i].1;
                    for &(ci, w) in v.range(i) {
                        g[ci] += s * w;
                    }
                }
                g
            })
            .collect();
        let mut grad = vec![Vec3::zeros(); n];
        for g in per_view {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        if lambda != 0.0 {
            for (a, b) in grad.iter_mut().zip(consistency_gradient(colors, &self.graph)?) {
                *a += b * lambda;
            }
        }
        Ok(grad)
    }
}

/// Fits per-segment colors with Adam under an exponentially decaying learning
/// rate: photometric loss only for the first `phase_fraction` of iterations,
/// then photometric plus `lambda · consistency`.
pub fn fit_colors(
    groom: &Groom,
    cameras: &[Camera],
    targets: &[Image],
    masks: &[Vec<f64>],
    settings: &FitSettings,
) -> Result<FitResult> {
    settings.validate()?;
    let problem = ColorProblem::new(groom, cameras, targets, masks, settings.graph_k, settings.background)?;
    let start = StrandColors::for_groom(groom, settings.initial_color.map(|v| v.clamp(0.0, 1.0)));
    fit_problem(&problem, start, settings)
}

pub fn fit_problem(problem: &ColorProblem, start: StrandColors, settings: &FitSettings) -> Result<FitResult> {
    let photometric = problem.has_observations();
    if !photometric {
        warn!("all hair masks are empty: fitting with the consistency term only");
    }
    let switch = (settings.phase_fraction * settings.iterations as f64).round() as usize;
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);

    let mut colors = start;
    let n = colors.values().len();
    let mut m = vec![Vec3::zeros(); n];
    let mut v = vec![Vec3::zeros(); n];
    let mut log = Vec::with_capacity(settings.iterations);
    let decay = settings.final_learning_rate / settings.learning_rate;

    for it in 0..settings.iterations {
        let lambda = if !photometric || it >= switch {
            settings.lambda_consistency
        } else {
            0.0
        };
        let (mut rgb, cons) = problem.loss(&colors)?;
        if !photometric {
            rgb = 0.0;
        }
        log.push(FitLogEntry {
            iter: it,
            loss_rgb: rgb,
            loss_consistency: cons,
            total: rgb + lambda * cons,
        });

        let mut grad = if photometric {
            problem.gradient(&colors, lambda)?
        } else {
            consistency_gradient(&colors, problem.graph())?
        };
        if !photometric && lambda == 0.0 {
            grad.iter_mut().for_each(|g| *g = Vec3::zeros());
        }

        let frac = if settings.iterations > 1 {
            it as f64 / (settings.iterations - 1) as f64
        } else {
            0.0
        };
        let lr = settings.learning_rate * decay.powf(frac);
        let t = (it + 1) as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for i in 0..n {
            let g = grad[i];
            m[i] = m[i] * beta1 + g * (1.0 - beta1);
            v[i] = v[i] * beta2 + g.component_mul(&g) * (1.0 - beta2);
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            let step = mh.zip_map(&vh, |a, b| a / (b.sqrt() + eps)) * lr;
            let c = &mut colors.values_mut()[i];
            *c = (*c - step).map(|x| x.clamp(0.0, 1.0));
        }
    }
    if log.iter().any(|e| !e.total.is_finite()) {
        return Err(Error::invalid("color fit produced a non-finite loss"));
    }
    Ok(FitResult { colors, log })
}
