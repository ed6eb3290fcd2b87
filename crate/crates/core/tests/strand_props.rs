use hairkit::strand::{arc_length, knn_points, resample_strand, tnb_frames};
use hairkit::Vec3;
use nalgebra::Matrix3;
use proptest::prelude::*;

fn point(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

/// Points snapped to a coarse lattice so ties and duplicates are common.
fn lattice_point() -> impl Strategy<Value = Vec3> {
    (-5i32..5, -5i32..5, -5i32..5).prop_map(|(x, y, z)| Vec3::new(x as f64, y as f64, z as f64) * 0.01)
}

/// Polyline with steps of at least 1 mm, so it is never degenerate.
fn polyline(max_points: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(point(0.02), 1..max_points).prop_map(|steps| {
        let mut p = Vec3::zeros();
        let mut out = vec![p];
        for s in steps {
            let s = if s.norm() < 1e-3 { Vec3::new(0.0, 0.0, -0.01) } else { s };
            p += s;
            out.push(p);
        }
        out
    })
}

fn brute(q: &Vec3, reference: &[Vec3], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = reference.iter().enumerate().map(|(i, r)| (i, (r - q).norm())).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Curved strand turning by less than 30° per vertex, with 5–20 mm steps.
fn curved_strand(max_points: usize) -> impl Strategy<Value = Vec<Vec3>> {
    // |turn| < 0.28·√3 < 0.5 keeps each bend under 30°
    prop::collection::vec((point(0.28), 0.005..0.02f64), 1..max_points)
        .prop_map(|steps| {
            let mut dir = Vec3::new(0.0, 0.0, -1.0);
            let mut p = Vec3::zeros();
            let mut out = vec![p];
            for (turn, len) in steps {
                dir = (dir + turn).normalize();
                p += dir * len;
                out.push(p);
            }
            out
        })
}

proptest! {
    #[test]
    fn knn_matches_brute_force(
        reference in prop::collection::vec(prop_oneof![point(0.1), lattice_point()], 1..300),
        query in prop::collection::vec(prop_oneof![point(0.12), lattice_point()], 1..20),
        k in 1usize..16,
    ) {
        let k = k.min(reference.len());
        let got = knn_points(&query, &reference, k).unwrap();
        for (q, list) in query.iter().zip(&got) {
            let want = brute(q, &reference, k);
            prop_assert_eq!(list.len(), k);
            for (n, (i, d)) in list.iter().zip(want) {
                prop_assert_eq!(n.index, i);
                prop_assert_eq!(n.distance, d);
            }
        }
    }

    #[test]
    fn resample_contract(points in polyline(12), n in 2usize..40) {
        let once = resample_strand(&points, n).unwrap();
        prop_assert_eq!(once.len(), n);
        prop_assert_eq!(once[0], points[0]);
        prop_assert_eq!(once[n - 1], *points.last().unwrap());
        prop_assert!(arc_length(&once).unwrap() <= arc_length(&points).unwrap() + 1e-12);
    }

    #[test]
    fn resample_is_idempotent(points in curved_strand(16), n in 2usize..40) {
        let once = resample_strand(&points, n).unwrap();
        let twice = resample_strand(&once, n).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).norm() <= 1e-9, "moved by {}", (a - b).norm());
        }
    }

    #[test]
    fn hair_like_strands_resample_to_equal_spacing(
        lateral in prop::collection::vec((-0.006..0.006f64, -0.006..0.006f64), 1..15),
        n in 3usize..40,
    ) {
        let mut p = Vec3::zeros();
        let mut points = vec![p];
        for (x, y) in lateral {
            p += Vec3::new(x, y, -0.01);
            points.push(p);
        }
        let out = resample_strand(&points, n).unwrap();
        let d: Vec<f64> = out.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        for x in &d {
            prop_assert!((x - mean).abs() <= 1e-9, "spacing {} vs mean {}", x, mean);
        }
    }

    #[test]
    fn frames_are_orthonormal(points in polyline(20)) {
        let frames = tnb_frames(&points).unwrap();
        prop_assert_eq!(frames.len(), points.len() - 1);
        for (j, f) in frames.iter().enumerate() {
            let r = f.rotation();
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() <= 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() <= 1e-9);
            let t = (points[j + 1] - points[j]).normalize();
            prop_assert!((f.tangent - t).amax() <= 1e-9);
        }
    }

    #[test]
    fn arc_length_is_translation_invariant(points in polyline(10), shift in point(5.0)) {
        let moved: Vec<Vec3> = points.iter().map(|p| p + shift).collect();
        let (a, b) = (arc_length(&points).unwrap(), arc_length(&moved).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }
}

#[test]
fn knn_rejects_bad_k() {
    let r = vec![Vec3::zeros(), Vec3::x()];
    assert!(knn_points(&r, &r, 0).is_err());
    assert!(knn_points(&r, &r, 3).is_err());
    assert!(knn_points(&r, &[], 1).is_err());
}
