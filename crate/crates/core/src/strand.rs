//! Groom representation, arc-length resampling, Frenet framing and root-space
//! nearest-neighbor queries.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::{Error, Result, Vec3};

/// Segments shorter than this are treated as zero-length.
const ZERO_SEGMENT: f64 = 1e-12;
/// Discrete curvature below this magnitude falls back to the reference-axis normal.
const CURVATURE_EPS: f64 = 1e-8;

/// A set of strands sharing one point count, stored strand-major.
///
/// Point 0 of each strand is the root (scalp attachment). Units are meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Groom {
    points: Vec<Vec3>,
    points_per_strand: usize,
}

impl Groom {
    /// Builds a groom from a flat strand-major point list.
    pub fn new(points: Vec<Vec3>, points_per_strand: usize) -> Result<Self> {
        if points_per_strand < 2 {
            return Err(Error::invalid(format!(
                "points per strand must be >= 2, got {points_per_strand}"
            )));
        }
        if points.len() % points_per_strand != 0 {
            return Err(Error::invalid(format!(
                "{} points is not a multiple of {points_per_strand} points per strand",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!(
                "non-finite coordinate at strand {}, point {}",
                i / points_per_strand,
                i % points_per_strand
            )));
        }
        Ok(Self {
            points,
            points_per_strand,
        })
    }

    /// Builds a groom from individual strands, which must all have the same length.
    pub fn from_strands(strands: Vec<Vec<Vec3>>) -> Result<Self> {
        let Some(first) = strands.first() else {
            return Err(Error::invalid("cannot infer point count of an empty strand list"));
        };
        let n = first.len();
        if let Some((i, s)) = strands.iter().enumerate().find(|(_, s)| s.len() != n) {
            return Err(Error::invalid(format!(
                "strand {i} has {} points, expected {n}",
                s.len()
            )));
        }
        Self::new(strands.into_iter().flatten().collect(), n)
    }

    pub fn strand_count(&self) -> usize {
        self.points.len() / self.points_per_strand
    }

    pub fn points_per_strand(&self) -> usize {
        self.points_per_strand
    }

    pub fn segments_per_strand(&self) -> usize {
        self.points_per_strand - 1
    }

    pub fn strand(&self, index: usize) -> &[Vec3] {
        let n = self.points_per_strand;
        &self.points[index * n..(index + 1) * n]
    }

    pub fn strands(&self) -> std::slice::ChunksExact<'_, Vec3> {
        self.points.chunks_exact(self.points_per_strand)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn root(&self, index: usize) -> Vec3 {
        self.points[index * self.points_per_strand]
    }

    pub fn roots(&self) -> Vec<Vec3> {
        self.strands().map(|s| s[0]).collect()
    }

    /// Returns true when both grooms have the same strand and point counts.
    pub fn same_shape(&self, other: &Groom) -> bool {
        self.points_per_strand == other.points_per_strand && self.points.len() == other.points.len()
    }
}

/// Orthonormal frame attached to one strand segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentFrame {
    pub tangent: Vec3,
    pub normal: Vec3,
    pub binormal: Vec3,
}

impl SegmentFrame {
    /// Rotation matrix with columns `[T N B]`.
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.tangent, self.normal, self.binormal])
    }
}

fn check_finite(points: &[Vec3]) -> Result<()> {
    match points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        Some(i) => Err(Error::invalid(format!("non-finite coordinate at point {i}"))),
        None => Ok(()),
    }
}

/// Total polyline length of a strand.
pub fn arc_length(points: &[Vec3]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "strand needs at least 2 points, got {}",
            points.len()
        )));
    }
    check_finite(points)?;
    Ok(points.windows(2).map(|w| (w[1] - w[0]).norm()).sum())
}

/// Resamples a strand to `n` points with equal consecutive chord lengths.
///
/// Points lie on the input polyline, in order, with endpoints copied verbatim.
/// The common chord length is found by bisection. A polyline whose points are
/// already equally spaced is its own resampling, so the operation is idempotent.
pub fn resample_strand(points: &[Vec3], n: usize) -> Result<Vec<Vec3>> {
    if n < 2 {
        return Err(Error::invalid(format!("resample count must be >= 2, got {n}")));
    }
    let total = arc_length(points)?;
    if total <= 0.0 {
        return Err(Error::DegenerateStrand {
            strand: None,
            reason: "zero arc length".into(),
        });
    }
    let last = points[points.len() - 1];
    if n == 2 {
        return Ok(vec![points[0], last]);
    }

    // equal chords never exceed the equal arc split, which is attained exactly
    // when the input is already equally spaced
    let (lo, hi) = (0.0, total / (n - 1) as f64);
    if let Some(inner) = chord_walk(points, hi, n - 2) {
        if ((last - inner[n - 3]).norm() - hi).abs() <= 1e-12 * hi {
            return Ok(std::iter::once(points[0]).chain(inner).chain(std::iter::once(last)).collect());
        }
    }
    let equal = |inner: &[Vec3], c: f64| ((last - inner[n - 3]).norm() - c).abs() <= 1e-9 * c;
    let first = bisect_chord(points, n, lo, hi);
    if let Some((c, inner)) = &first {
        if equal(inner, *c) {
            return Ok(join(points[0], inner, last));
        }
    }

    // The walk can jump where the strand curls back near itself, so the last gap
    // is not continuous in the chord; look for a bracket holding a true solution,
    // largest chord first.
    const SCAN: usize = 64;
    let chord = |i: usize| hi * i as f64 / SCAN as f64;
    let gap: Vec<Option<f64>> = (1..=SCAN)
        .map(|i| chord_walk(points, chord(i), n - 2).map(|inner| (last - inner[n - 3]).norm() - chord(i)))
        .collect();
    for i in (0..SCAN - 1).rev() {
        if gap[i].is_some_and(|g| g >= 0.0) && !gap[i + 1].is_some_and(|g| g >= 0.0) {
            if let Some((c, inner)) = bisect_chord(points, n, chord(i + 1), chord(i + 2)) {
                if equal(&inner, c) {
                    return Ok(join(points[0], &inner, last));
                }
            }
        }
    }
    // no exact solution: keep the largest feasible chord, the last gap runs long
    match first {
        Some((_, inner)) => Ok(join(points[0], &inner, last)),
        None => Err(Error::DegenerateStrand {
            strand: None,
            reason: "cannot place equally spaced points (closed strand?)".into(),
        }),
    }
}

fn join(first: Vec3, inner: &[Vec3], last: Vec3) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(inner.len() + 2);
    out.push(first);
    out.extend_from_slice(inner);
    out.push(last);
    out
}

/// Largest chord in `[lo, hi)` (up to bisection resolution) whose walk leaves a
/// last gap of at least the chord, with the placed points.
fn bisect_chord(points: &[Vec3], n: usize, mut lo: f64, mut hi: f64) -> Option<(f64, Vec<Vec3>)> {
    let last = points[points.len() - 1];
    let mut best = None;
    for _ in 0..200 {
        let c = 0.5 * (lo + hi);
        if c <= lo || c >= hi {
            break;
        }
        match chord_walk(points, c, n - 2) {
            Some(inner) if (last - inner[n - 3]).norm() >= c => {
                lo = c;
                best = Some((c, inner));
            }
            _ => hi = c,
        }
    }
    best
}

/// Walks the polyline placing `count` points, each the first point further along
/// at distance `c` from the previous one. `None` if the polyline ends first.
fn chord_walk(points: &[Vec3], c: f64, count: usize) -> Option<Vec<Vec3>> {
    let mut out = Vec::with_capacity(count);
    let mut x = points[0];
    let (mut seg, mut t0) = (0, 0.0);
    while out.len() < count {
        let mut found = None;
        while seg + 1 < points.len() {
            let (a, b) = (points[seg], points[seg + 1]);
            let d = b - a;
            let qa = d.norm_squared();
            if qa > 0.0 {
                // |a + t d - x|^2 = c^2, take the exit root
                let ax = a - x;
                let qb = d.dot(&ax);
                let qc = ax.norm_squared() - c * c;
                let disc = qb * qb - qa * qc;
                if disc >= 0.0 {
                    // vertices exactly at distance c land a rounding error off the segment
                    let t = (-qb + disc.sqrt()) / qa;
                    if t >= t0 - 1e-12 && t <= 1.0 + 1e-12 {
                        found = Some(t.clamp(t0, 1.0));
                        break;
                    }
                }
            }
            seg += 1;
            t0 = 0.0;
        }
        let t = found?;
        x = points[seg] + (points[seg + 1] - points[seg]) * t;
        t0 = t;
        out.push(x);
    }
    Some(out)
}

/// Resamples every strand of a groom to `n` points.
pub fn resample_groom(groom: &Groom, n: usize) -> Result<Groom> {
    let strands: Vec<Vec<Vec3>> = groom
        .strands()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(i, s)| resample_strand(s, n).map_err(|e| e.with_strand(i)))
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(strands.len() * n);
    for s in strands {
        points.extend(s);
    }
    Groom::new(points, n)
}

fn fallback_normal(tangent: &Vec3) -> Vec3 {
    let mut axis = Vec3::new(0.0, 1.0, 0.0);
    if tangent.dot(&axis).abs() > 0.9 {
        axis = Vec3::new(0.0, 0.0, 1.0);
    }
    (axis - tangent * axis.dot(tangent)).normalize()
}

/// Frenet frames, one per segment.
///
/// The normal follows the discrete curvature direction (difference of the
/// neighboring segment tangents, projected off the tangent). Straight stretches
/// use a fixed reference axis, and normals are sign-flipped to stay continuous
/// along the strand.
pub fn tnb_frames(points: &[Vec3]) -> Result<Vec<SegmentFrame>> {
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "strand needs at least 2 points, got {}",
            points.len()
        )));
    }
    check_finite(points)?;

    let segments = points.len() - 1;
    let mut tangents = Vec::with_capacity(segments);
    let mut degenerate = vec![false; segments];
    for i in 0..segments {
        let d = points[i + 1] - points[i];
        let len = d.norm();
        if len <= ZERO_SEGMENT {
            if i == 0 {
                return Err(Error::DegenerateStrand {
                    strand: None,
                    reason: "leading zero-length segment".into(),
                });
            }
            degenerate[i] = true;
            let prev = tangents[i - 1];
            tangents.push(prev);
        } else {
            tangents.push(d / len);
        }
    }

    let mut frames: Vec<SegmentFrame> = Vec::with_capacity(segments);
    for i in 0..segments {
        if degenerate[i] {
            let prev = frames[i - 1];
            frames.push(prev);
            continue;
        }
        let t = tangents[i];
        let before = if i > 0 { tangents[i - 1] } else { t };
        let after = if i + 1 < segments { tangents[i + 1] } else { t };
        let bend = after - before;
        let curvature = bend - t * bend.dot(&t);
        let mut n = if curvature.norm() >= CURVATURE_EPS {
            curvature.normalize()
        } else {
            fallback_normal(&t)
        };
        if let Some(prev) = frames.last() {
            if n.dot(&prev.normal) < 0.0 {
                n = -n;
            }
        }
        let b = t.cross(&n).normalize();
        frames.push(SegmentFrame {
            tangent: t,
            normal: n,
            binormal: b,
        });
    }
    Ok(frames)
}

/// One nearest-neighbor result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.index.cmp(&b.index))
}

/// Below this many reference points a linear scan is used.
const BRUTE_FORCE_LIMIT: usize = 64;

/// Uniform grid over a static point set, stored as compressed cell lists.
struct PointGrid {
    origin: Vec3,
    cell: f64,
    dims: [i64; 3],
    cell_start: Vec<u32>,
    entries: Vec<u32>,
}

impl PointGrid {
    fn build(points: &[Vec3]) -> Option<Self> {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = hi - lo;
        let max_extent = extent.max();
        if max_extent <= 0.0 {
            return None;
        }
        // about two points per cell along the dominant spread
        let per_axis = ((points.len() as f64 / 2.0).cbrt().ceil()).max(1.0);
        let cell = max_extent / per_axis;
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as i64 + 1).max(1));
        let cell_count = (dims[0] * dims[1] * dims[2]) as usize;

        let mut grid = Self {
            origin: lo,
            cell,
            dims,
            cell_start: vec![0; cell_count + 1],
            entries: vec![0; points.len()],
        };
        let ids: Vec<usize> = points
            .iter()
            .map(|p| grid.flat(grid.clamp(grid.coord(p))))
            .collect();
        for &c in &ids {
            grid.cell_start[c + 1] += 1;
        }
        for c in 0..cell_count {
            grid.cell_start[c + 1] += grid.cell_start[c];
        }
        let mut fill = grid.cell_start.clone();
        for (i, &c) in ids.iter().enumerate() {
            grid.entries[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        Some(grid)
    }

    fn coord(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.origin[a]) / self.cell).floor() as i64)
    }

    fn clamp(&self, c: [i64; 3]) -> [i64; 3] {
        [0, 1, 2].map(|a| c[a].clamp(0, self.dims[a] - 1))
    }

    fn flat(&self, c: [i64; 3]) -> usize {
        ((c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]) as usize
    }

    fn cell_points(&self, c: [i64; 3]) -> &[u32] {
        let f = self.flat(c);
        &self.entries[self.cell_start[f] as usize..self.cell_start[f + 1] as usize]
    }

    fn query(&self, q: &Vec3, reference: &[Vec3], k: usize) -> Vec<Neighbor> {
        let qc = self.coord(q);
        // Chebyshev cell distance from the query cell to the grid box and to its far corner
        let mut first_ring = 0;
        let mut last_ring = 0;
        for a in 0..3 {
            let below = (0 - qc[a]).max(0);
            let above = (qc[a] - (self.dims[a] - 1)).max(0);
            first_ring = first_ring.max(below.max(above));
            last_ring = last_ring.max(qc[a].abs().max((qc[a] - (self.dims[a] - 1)).abs()));
        }

        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        for r in first_ring..=last_ring {
            let lo = [0, 1, 2].map(|a| (qc[a] - r).max(0));
            let hi = [0, 1, 2].map(|a| (qc[a] + r).min(self.dims[a] - 1));
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let ring = (x - qc[0])
                            .abs()
                            .max((y - qc[1]).abs())
                            .max((z - qc[2]).abs());
                        if ring != r {
                            continue;
                        }
                        for &i in self.cell_points([x, y, z]) {
                            let n = Neighbor {
                                index: i as usize,
                                distance: (q - reference[i as usize]).norm(),
                            };
                            if best.len() == k
                                && neighbor_order(&n, &best[k - 1]) != std::cmp::Ordering::Less
                            {
                                continue;
                            }
                            let at = best
                                .binary_search_by(|b| neighbor_order(b, &n))
                                .unwrap_or_else(|e| e);
                            best.insert(at, n);
                            best.truncate(k);
                        }
                    }
                }
            }
            // unvisited cells are at least r cells away on some axis
            if best.len() == k && best[k - 1].distance < (r as f64) * self.cell * (1.0 - 1e-9) {
                break;
            }
        }
        best
    }
}

fn brute_force(q: &Vec3, reference: &[Vec3], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = reference
        .iter()
        .enumerate()
        .map(|(index, p)| Neighbor {
            index,
            distance: (q - p).norm(),
        })
        .collect();
    all.sort_by(neighbor_order);
    all.truncate(k);
    all
}

/// k nearest reference points for every query point, ascending by distance with
/// ties broken by ascending reference index.
pub fn knn_points(query: &[Vec3], reference: &[Vec3], k: usize) -> Result<Vec<Vec<Neighbor>>> {
    if reference.is_empty() {
        return Err(Error::invalid("empty reference set"));
    }
    if k == 0 || k > reference.len() {
        return Err(Error::invalid(format!(
            "k must be in 1..={}, got {k}",
            reference.len()
        )));
    }
    check_finite(query)?;
    check_finite(reference)?;

    let grid = if reference.len() > BRUTE_FORCE_LIMIT && k * 4 < reference.len() {
        PointGrid::build(reference)
    } else {
        None
    };
    Ok(query
        .par_iter()
        .map(|q| match &grid {
            Some(g) => g.query(q, reference, k),
            None => brute_force(q, reference, k),
        })
        .collect())
}

/// k nearest reference roots for every query root.
pub fn knn_roots(query: &Groom, reference: &Groom, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    knn_points(&query.roots(), &reference.roots(), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(n: usize, len: f64) -> Vec<Vec3> {
        (0..n)
            .map(|i| Vec3::new(len * i as f64 / (n - 1) as f64, 0.0, 0.0))
            .collect()
    }

    fn semicircle(n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let a = PI * i as f64 / (n - 1) as f64;
                Vec3::new(a.cos(), a.sin(), 0.0)
            })
            .collect()
    }

    #[test]
    fn arc_length_cases() {
        assert_eq!(arc_length(&line(5, 1.0)).unwrap(), 1.0);
        assert_eq!(arc_length(&[Vec3::new(1.0, 2.0, 3.0); 4]).unwrap(), 0.0);
        assert!((arc_length(&semicircle(1000)).unwrap() - PI).abs() < 1e-4);
        assert!(arc_length(&[Vec3::zeros(), Vec3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn resample_line_to_quarters() {
        let out = resample_strand(&line(3, 1.0), 5).unwrap();
        for (j, p) in out.iter().enumerate() {
            assert!((p.x - 0.25 * j as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn resample_semicircle_angles() {
        // oracle: brute-force arc-length table over the input polyline
        let input = semicircle(1000);
        let out = resample_strand(&input, 3).unwrap();
        let angles: Vec<f64> = out.iter().map(|p| p.y.atan2(p.x)).collect();
        for (a, want) in angles.iter().zip([0.0, PI / 2.0, PI]) {
            assert!((a - want).abs() < 1e-3, "{a} vs {want}");
        }
    }

    #[test]
    fn resample_zero_length_is_degenerate() {
        let err = resample_strand(&[Vec3::zeros(); 3], 4).unwrap_err();
        assert!(matches!(err, Error::DegenerateStrand { .. }));
        let g = Groom::from_strands(vec![line(3, 1.0), vec![Vec3::zeros(); 3]]).unwrap();
        match resample_groom(&g, 4).unwrap_err() {
            Error::DegenerateStrand { strand, .. } => assert_eq!(strand, Some(1)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn resample_groom_contract() {
        let a = line(7, 2.0);
        let b: Vec<Vec3> = semicircle(40);
        let g = Groom::from_strands(vec![a.clone(), b[..7].to_vec()]).unwrap();
        let r = resample_groom(&g, 50).unwrap();
        assert_eq!(r.points_per_strand(), 50);
        assert_eq!(r.strand_count(), 2);
        for (orig, res) in g.strands().zip(r.strands()) {
            assert_eq!(orig[0], res[0]);
            assert_eq!(orig[6], res[49]);
        }
        let again = resample_groom(&r, 50).unwrap();
        for (p, q) in r.points().iter().zip(again.points()) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn straight_strand_uses_fallback_frame() {
        for f in tnb_frames(&line(6, 1.0)).unwrap() {
            assert_eq!(f.tangent, Vec3::x());
            assert!((f.normal - Vec3::y()).norm() < 1e-15);
            assert!((f.binormal - Vec3::z()).norm() < 1e-15);
        }
        // tangent along y switches the reference axis to z
        let f = tnb_frames(&[Vec3::zeros(), Vec3::y()]).unwrap()[0];
        assert!((f.normal - Vec3::z()).norm() < 1e-15);
    }

    #[test]
    fn circle_normals_point_inward() {
        let n = 100;
        let pts: Vec<Vec3> = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                Vec3::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        for (i, f) in tnb_frames(&pts).unwrap().iter().enumerate() {
            let mid = (pts[i] + pts[i + 1]) / 2.0;
            let inward = -Vec3::new(mid.x, mid.y, 0.0).normalize();
            assert!((f.normal - inward).norm() < 1e-2, "segment {i}");
        }
    }

    #[test]
    fn zero_length_segments() {
        let mut pts = line(4, 1.0);
        pts.insert(2, pts[2]);
        let frames = tnb_frames(&pts).unwrap();
        assert_eq!(frames[2], frames[1]);
        let lead = [Vec3::zeros(), Vec3::zeros(), Vec3::x()];
        assert!(matches!(
            tnb_frames(&lead).unwrap_err(),
            Error::DegenerateStrand { .. }
        ));
    }

    #[test]
    fn inflection_keeps_normals_continuous() {
        // S-curve: curvature changes sign halfway
        let pts: Vec<Vec3> = (0..60)
            .map(|i| {
                let t = i as f64 / 59.0 * 2.0 * PI;
                Vec3::new(t, t.sin(), 0.0)
            })
            .collect();
        let frames = tnb_frames(&pts).unwrap();
        for w in frames.windows(2) {
            assert!(w[0].normal.dot(&w[1].normal) > 0.0);
            assert!(w[0].binormal.dot(&w[1].binormal) > 0.0);
        }
    }

    #[test]
    fn knn_small_cases() {
        let reference: Vec<Vec3> = (0..6).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let out = knn_points(&[reference[3]], &reference, 2).unwrap();
        assert_eq!(out[0][0], Neighbor { index: 3, distance: 0.0 });
        let all = knn_points(&[Vec3::new(2.5, 0.0, 0.0)], &reference, 6).unwrap();
        let idx: Vec<usize> = all[0].iter().map(|n| n.index).collect();
        // ties at equal distance resolve by index
        assert_eq!(idx, vec![2, 3, 1, 4, 0, 5]);
        assert!(knn_points(&[Vec3::zeros()], &[], 1).is_err());
        assert!(knn_points(&[Vec3::zeros()], &reference, 7).is_err());
        assert!(knn_points(&[Vec3::zeros()], &reference, 0).is_err());
    }
}
