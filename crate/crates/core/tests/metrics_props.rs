use hairkit::metrics::{analyze, explained_variance, temporal_smoothness, MotionMatrix};
use nalgebra::{DMatrix, Rotation3, Vector3};
use proptest::prelude::*;

fn motion() -> impl Strategy<Value = MotionMatrix> {
    (2usize..12, 1usize..8).prop_flat_map(|(t, p)| {
        prop::collection::vec(-1.0..1.0f64, t * p * 3).prop_map(move |v| {
            MotionMatrix::new(DMatrix::from_row_slice(t, p * 3, &v), (0..t).map(|i| i as f64 / 30.0).collect()).unwrap()
        })
    })
}

fn map_points(m: &MotionMatrix, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> MotionMatrix {
    let mut data = m.data.clone();
    for r in 0..data.nrows() {
        for p in 0..m.particles() {
            let q = f(Vector3::new(data[(r, 3 * p)], data[(r, 3 * p + 1)], data[(r, 3 * p + 2)]));
            for c in 0..3 {
                data[(r, 3 * p + c)] = q[c];
            }
        }
    }
    MotionMatrix::new(data, m.frame_times.clone()).unwrap()
}

/// All components span the centered rows, so TS is the plain mean frame distance.
fn full_ts(m: &MotionMatrix) -> f64 {
    let t = m.frames();
    let total: f64 = (1..t).map(|i| (m.data.row(i) - m.data.row(i - 1)).norm()).sum();
    total / (t - 1) as f64 / (m.particles() as f64).sqrt()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn explained_variance_is_a_sorted_percentage(m in motion()) {
        let ev = explained_variance(&m);
        prop_assert!(close(ev.iter().sum::<f64>(), 100.0, 1e-9));
        prop_assert!(ev.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(ev.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn full_rank_smoothness_matches_frame_distances(m in motion()) {
        let ts = temporal_smoothness(&m, m.data.ncols()).unwrap();
        prop_assert!(close(ts, full_ts(&m), 1e-9), "{} vs {}", ts, full_ts(&m));
    }

    #[test]
    fn invariant_under_rigid_change_of_world_frame(
        m in motion(),
        axis in (-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64),
        angle in -3.0..3.0f64,
        shift in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64),
    ) {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(axis.0, axis.1, axis.2)), angle);
        let shift = Vector3::new(shift.0, shift.1, shift.2);
        let moved = map_points(&m, |p| rot * p + shift);
        let (a, b) = (analyze(&m, m.data.ncols()).unwrap(), analyze(&moved, m.data.ncols()).unwrap());
        prop_assert!(close(a.pc1_percent, b.pc1_percent, 1e-8));
        prop_assert!(close(a.ts, b.ts, 1e-8));
    }

    #[test]
    fn scaling_scales_smoothness_and_keeps_pc1(m in motion(), s in 0.01..100.0f64) {
        let scaled = map_points(&m, |p| p * s);
        let (a, b) = (analyze(&m, m.data.ncols()).unwrap(), analyze(&scaled, m.data.ncols()).unwrap());
        prop_assert!(close(a.pc1_percent, b.pc1_percent, 1e-8));
        prop_assert!(close(a.ts * s, b.ts, 1e-8));
    }

    #[test]
    fn running_std_starts_at_zero(m in motion()) {
        let r = analyze(&m, 3).unwrap();
        prop_assert_eq!(r.tracks.running_std.len(), m.frames());
        prop_assert!(r.tracks.running_std[0].iter().all(|&v| v == 0.0));
        prop_assert_eq!(&r.tracks.times, &m.frame_times);
    }
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(MotionMatrix::new(DMatrix::zeros(1, 3), vec![0.0]).is_err());
    assert!(MotionMatrix::new(DMatrix::zeros(2, 4), vec![0.0, 1.0]).is_err());
    assert!(MotionMatrix::new(DMatrix::zeros(2, 3), vec![0.0]).is_err());
    assert!(MotionMatrix::new(DMatrix::from_element(2, 3, f64::NAN), vec![0.0, 1.0]).is_err());
    let ok = MotionMatrix::new(DMatrix::zeros(2, 3), vec![0.0, 1.0]).unwrap();
    assert!(analyze(&ok, 0).is_err());
}
