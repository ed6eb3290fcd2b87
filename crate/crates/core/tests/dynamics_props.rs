use hairkit::dynamics::self_collision::violating_pairs;
use hairkit::dynamics::{
    resolve_self_collisions, simulate, ColliderSet, HairParams, PoseKey, PoseTrack, RigidPose, SimConfig, Sphere, Wind,
};
use hairkit::io::{make_synthetic, Style};
use hairkit::Vec3;
use nalgebra::UnitQuaternion;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_pairs(pos: &[Vec3], pps: usize, radius: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..pos.len() {
        for b in a + 1..pos.len() {
            let same = a / pps == b / pps && b - a <= 2;
            if !same && (pos[b] - pos[a]).norm() < 2.0 * radius {
                out.push((a, b));
            }
        }
    }
    out
}

#[test]
fn spatial_hash_matches_quadratic_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..20 {
        let radius = [0.002, 0.01, 0.05][case % 3];
        let pps = 1 + case % 6;
        let n = 1000 - 1000 % pps;
        let pos: Vec<Vec3> = (0..n)
            .map(|_| {
                // a third of the points sit exactly on cell boundaries
                let mut p = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                if rng.random_bool(1.0 / 3.0) {
                    p = p.map(|c| (c / (2.0 * radius)).round() * 2.0 * radius);
                }
                p
            })
            .collect();
        assert_eq!(violating_pairs(&pos, pps, radius), brute_pairs(&pos, pps, radius), "case {case}");
    }
}

proptest! {
    #[test]
    fn separation_respects_pins(
        pos in prop::collection::vec((-0.02..0.02f64, -0.02..0.02f64, -0.02..0.02f64), 2..80),
        pinned in prop::collection::vec(any::<bool>(), 80),
    ) {
        let mut pos: Vec<Vec3> = pos.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
        let pinned = &pinned[..pos.len()];
        let before = pos.clone();
        let left = resolve_self_collisions(&mut pos, 4, pinned, 0.003, 8);
        prop_assert_eq!(left, violating_pairs(&pos, 4, 0.003).len());
        for i in 0..pos.len() {
            if pinned[i] {
                prop_assert_eq!(pos[i], before[i]);
            }
            prop_assert!(pos[i].iter().all(|c| c.is_finite()));
        }
    }

    #[test]
    fn sphere_projection_lands_on_the_surface(p in (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), r in 0.1..1.5f64) {
        let set = ColliderSet::new(vec![Sphere { center: Vec3::new(0.1, -0.2, 0.3), radius: r }], vec![]).unwrap();
        let mut q = Vec3::new(p.0, p.1, p.2);
        let inside = (q - Vec3::new(0.1, -0.2, 0.3)).norm() < r;
        let normal = set.project(&mut q);
        prop_assert_eq!(normal.is_some(), inside);
        if inside {
            prop_assert!(((q - Vec3::new(0.1, -0.2, 0.3)).norm() - r).abs() <= 1e-12);
        }
    }
}

fn head_track() -> PoseTrack {
    let key = |t: f64, angle: f64, x: f64| PoseKey {
        time: t,
        pose: RigidPose::new(UnitQuaternion::from_euler_angles(0.0, angle, 0.0), Vec3::new(x, 0.0, 0.0)),
    };
    PoseTrack::new(vec![key(0.0, 0.0, 0.0), key(0.2, 0.3, 0.05), key(0.4, -0.2, 0.0)]).unwrap()
}

#[test]
fn roots_follow_the_head_and_runs_repeat() {
    let guides = make_synthetic(Style::Wavy, 40, 12, 3).unwrap();
    let config = SimConfig {
        wind: Wind { direction: Vec3::y(), strength: 3.0, gust_frequency: Some(2.0) },
        ..SimConfig::default()
    };
    let params = HairParams::default();
    let track = head_track();
    let run = || simulate(&guides, &params, &config, &ColliderSet::default(), &track, 13, 1.0 / 30.0).unwrap();
    let a = run();
    assert_eq!(a, run());
    for (f, frame) in a.frames.iter().enumerate() {
        let pose = track.sample(f as f64 / 30.0);
        for (rest, now) in guides.roots().iter().zip(frame.roots()) {
            assert!((pose.apply(rest) - now).norm() <= 1e-12, "frame {f}");
        }
        assert!(frame.points().iter().all(|p| p.iter().all(|c| c.is_finite())));
    }
    // the hair actually moves relative to the head
    let last = a.frames.last().unwrap();
    let pose = track.sample(12.0 / 30.0);
    let drift = guides.points().iter().zip(last.points()).map(|(r, p)| (pose.apply(r) - p).norm()).fold(0.0, f64::max);
    assert!(drift > 1e-3, "drift {drift}");
}

#[test]
fn invalid_settings_are_rejected() {
    let guides = make_synthetic(Style::StraightBob, 4, 5, 0).unwrap();
    let track = PoseTrack::identity();
    let params = HairParams::default();
    let none = ColliderSet::default();
    let bad_dt = SimConfig { dt: 0.0, ..SimConfig::default() };
    assert!(simulate(&guides, &params, &bad_dt, &none, &track, 3, 0.1).is_err());
    assert!(simulate(&guides, &params, &SimConfig::default(), &none, &track, 0, 0.1).is_err());
    assert!(simulate(&guides, &params, &SimConfig::default(), &none, &track, 3, -1.0).is_err());
    let bad_mass = HairParams { mass: -1.0, ..HairParams::default() };
    assert!(simulate(&guides, &bad_mass, &SimConfig::default(), &none, &track, 3, 0.1).is_err());
}
