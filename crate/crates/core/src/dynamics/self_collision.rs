//! Particle–particle separation between strands.
//!
//! Candidate pairs come from a uniform spatial hash with cell size `2 * radius`.
//! Each pass computes all pair corrections from a read-only snapshot, then applies
//! them in ascending pair order, averaged per particle.

use rayon::prelude::*;

use crate::Vec3;

type Cell = (i64, i64, i64);

/// Separations are pushed slightly past `2 * radius` so rounding cannot leave
/// a pair marginally inside.
const SEPARATION_SLOP: f64 = 1e-6;

fn cell_of(p: &Vec3, inv: f64) -> Cell {
    (
        (p.x * inv).floor() as i64,
        (p.y * inv).floor() as i64,
        (p.z * inv).floor() as i64,
    )
}

/// Same-strand particles within two indices never collide with each other.
fn excluded(a: usize, b: usize, points_per_strand: usize) -> bool {
    a / points_per_strand == b / points_per_strand && b - a <= 2
}

fn bucket(c: &Cell, mask: u64) -> usize {
    let h = (c.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (c.1 as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (c.2 as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    ((h ^ (h >> 29)) & mask) as usize
}

/// All index pairs `(a, b)`, `a < b`, closer than `2 * radius`, in ascending order.
pub fn violating_pairs(
    positions: &[Vec3],
    points_per_strand: usize,
    radius: f64,
) -> Vec<(usize, usize)> {
    let diameter = 2.0 * radius;
    let inv = 1.0 / diameter;
    let cells: Vec<Cell> = positions.iter().map(|p| cell_of(p, inv)).collect();

    // counting sort of particles into a fixed-size hash table; several cells
    // may share a bucket, so candidates are filtered by exact cell below
    let size = (2 * positions.len()).next_power_of_two().max(16);
    let mask = size as u64 - 1;
    let mut starts = vec![0u32; size + 1];
    for c in &cells {
        starts[bucket(c, mask) + 1] += 1;
    }
    for i in 0..size {
        starts[i + 1] += starts[i];
    }
    let mut fill = starts.clone();
    let mut entries = vec![0u32; positions.len()];
    for (i, c) in cells.iter().enumerate() {
        let b = bucket(c, mask);
        entries[fill[b] as usize] = i as u32;
        fill[b] += 1;
    }

    const CHUNK: usize = 512;
    let chunks: Vec<Vec<(usize, usize)>> = (0..positions.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut found = Vec::new();
            for a in chunk * CHUNK..((chunk + 1) * CHUNK).min(positions.len()) {
                let (cx, cy, cz) = cells[a];
                let first = found.len();
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let nc = (cx + dx, cy + dy, cz + dz);
                            let b = bucket(&nc, mask);
                            for &e in &entries[starts[b] as usize..starts[b + 1] as usize] {
                                let e = e as usize;
                                if e <= a || cells[e] != nc || excluded(a, e, points_per_strand) {
                                    continue;
                                }
                                if (positions[e] - positions[a]).norm() < diameter {
                                    found.push((a, e));
                                }
                            }
                        }
                    }
                }
                found[first..].sort_unstable();
            }
            found
        })
        .collect();
    chunks.concat()
}

/// Pushes violating pairs apart along their separation direction (+z for
/// coincident particles). Pinned particles do not move. Runs up to `max_passes`
/// passes and returns the number of violating pairs left afterwards.
pub fn resolve_self_collisions(
    positions: &mut [Vec3],
    points_per_strand: usize,
    pinned: &[bool],
    radius: f64,
    max_passes: usize,
) -> usize {
    separate(positions, points_per_strand, pinned, radius, max_passes);
    violating_pairs(positions, points_per_strand, radius).len()
}

/// The passes of [`resolve_self_collisions`] without the final recount.
pub(crate) fn separate(
    positions: &mut [Vec3],
    points_per_strand: usize,
    pinned: &[bool],
    radius: f64,
    max_passes: usize,
) {
    let target = 2.0 * radius * (1.0 + SEPARATION_SLOP);
    let mut delta = vec![Vec3::zeros(); positions.len()];
    let mut count = vec![0u32; positions.len()];
    for pass in 0..max_passes {
        let pairs = violating_pairs(positions, points_per_strand, radius);
        if pairs.is_empty() {
            return;
        }
        if pass > 0 {
            delta.iter_mut().for_each(|d| *d = Vec3::zeros());
            count.iter_mut().for_each(|c| *c = 0);
        }
        let snapshot: &[Vec3] = positions;
        let corrections: Vec<(Vec3, Vec3)> = pairs
            .par_iter()
            .map(|&(a, b)| {
                let wa = if pinned[a] { 0.0 } else { 1.0 };
                let wb = if pinned[b] { 0.0 } else { 1.0 };
                if wa + wb == 0.0 {
                    return (Vec3::zeros(), Vec3::zeros());
                }
                let d = snapshot[b] - snapshot[a];
                let dist = d.norm();
                let n = if dist > 1e-12 { d / dist } else { Vec3::z() };
                let push = n * ((target - dist) / (wa + wb));
                (-push * wa, push * wb)
            })
            .collect();

        for (&(a, b), (da, db)) in pairs.iter().zip(&corrections) {
            delta[a] += da;
            delta[b] += db;
            count[a] += 1;
            count[b] += 1;
        }
        for ((p, d), &c) in positions.iter_mut().zip(&delta).zip(&count) {
            if c > 0 {
                *p += d / c as f64;
            }
        }
    }
}
