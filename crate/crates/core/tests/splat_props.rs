use hairkit::appearance::GaussianPrimitive;
use hairkit::splat::{rasterize, rasterize_with_weights, render_primitives, Camera, Image, Splat2D, MAX_ALPHA, MIN_TRANSMITTANCE};
use hairkit::Vec3;
use nalgebra::{Matrix2, Matrix3, UnitQuaternion, Vector2};
use proptest::prelude::*;

const W: usize = 29;
const H: usize = 37;

fn camera() -> Camera {
    Camera::new(100.0, W as f64 / 2.0, H as f64 / 2.0, W, H, Matrix3::identity(), Vec3::zeros()).unwrap()
}

fn splat() -> impl Strategy<Value = Splat2D> {
    (
        (-6.0..W as f64 + 6.0, -6.0..H as f64 + 6.0),
        (0.2..12.0f64, 0.2..12.0f64, 0.0..std::f64::consts::PI),
        // few distinct depths so ties are common
        0u8..6,
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64),
        0.0..1.0f64,
    )
        .prop_map(|((x, y), (l1, l2, th), depth, (r, g, b), opacity)| {
            let (c, s) = (th.cos(), th.sin());
            let rot = Matrix2::new(c, -s, s, c);
            Splat2D {
                mean: Vector2::new(x, y),
                cov: rot * Matrix2::new(l1, 0.0, 0.0, l2) * rot.transpose(),
                depth: 1.0 + depth as f64 * 0.5,
                color: Vec3::new(r, g, b),
                opacity,
                source: 0,
            }
        })
}

fn splats(max: usize) -> impl Strategy<Value = Vec<Splat2D>> {
    prop::collection::vec(splat(), 0..max).prop_map(|mut v| {
        for (i, s) in v.iter_mut().enumerate() {
            s.source = i;
        }
        v
    })
}

/// Per-pixel front-to-back compositing over every splat, no binning or culling.
fn reference(splats: &[Splat2D], background: Vec3) -> (Image, Vec<Vec<(usize, f64)>>) {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(a.cmp(&b)));
    let mut image = Image::filled(W, H, background);
    let mut weights = vec![Vec::new(); W * H];
    for y in 0..H {
        for x in 0..W {
            let mut t = 1.0;
            let mut c = Vec3::zeros();
            for &i in &order {
                if t < MIN_TRANSMITTANCE {
                    break;
                }
                let s = &splats[i];
                let det = s.cov.determinant();
                let conic = Matrix2::new(s.cov[(1, 1)], -s.cov[(0, 1)], -s.cov[(1, 0)], s.cov[(0, 0)]) / det;
                let d = Vector2::new(x as f64, y as f64) - s.mean;
                let q = d.dot(&(conic * d));
                if q > 9.0 {
                    continue;
                }
                let alpha = (s.opacity * (-0.5 * q).exp()).min(MAX_ALPHA);
                if alpha <= 0.0 {
                    continue;
                }
                c += s.color * alpha * t;
                weights[y * W + x].push((s.source, alpha * t));
                t *= 1.0 - alpha;
            }
            image.pixels[y * W + x] = c + background * t;
        }
    }
    (image, weights)
}

fn max_diff(a: &Image, b: &Image) -> f64 {
    a.pixels.iter().zip(&b.pixels).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn matches_brute_force_compositing(list in splats(40), bg in (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64)) {
        let bg = Vec3::new(bg.0, bg.1, bg.2);
        let (image, stats) = rasterize(&list, &camera(), bg);
        let (want, want_weights) = reference(&list, bg);
        prop_assert_eq!(stats.skipped, 0);
        prop_assert!(max_diff(&image, &want) <= 1e-12, "max diff {}", max_diff(&image, &want));

        // the weight path must agree as well
        let (_, map, _) = rasterize_with_weights(&list, &camera(), bg);
        for (p, entries) in want_weights.iter().enumerate() {
            let got = map.pixel(p);
            prop_assert_eq!(got.len(), entries.len());
            for (&(s, w), &(rs, rw)) in got.iter().zip(entries) {
                prop_assert_eq!(s as usize, rs);
                prop_assert!((w - rw).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn input_order_does_not_matter_for_distinct_depths(list in splats(30), seed in any::<u64>()) {
        let mut list = list;
        for (i, s) in list.iter_mut().enumerate() {
            s.depth += i as f64 * 1e-3;
        }
        let mut shuffled = list.clone();
        // deterministic Fisher-Yates driven by the seed
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let (a, _) = rasterize(&list, &camera(), Vec3::zeros());
        let (b, _) = rasterize(&shuffled, &camera(), Vec3::zeros());
        prop_assert!(max_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn weight_map_reconstructs_the_image(
        prims in prop::collection::vec(
            ((-0.1..0.1f64, -0.1..0.1f64, 0.5..1.5f64), (0.001..0.03f64, 0.001..0.03f64), (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 0.05..1.0f64),
            0..40,
        ),
        recolor in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 40),
    ) {
        let prims: Vec<GaussianPrimitive> = prims
            .into_iter()
            .map(|((x, y, z), (sx, sy), (r, g, b), opacity)| GaussianPrimitive {
                mean: Vec3::new(x, y, z),
                scale: Vec3::new(sx, sy, 0.01),
                rotation: UnitQuaternion::from_euler_angles(x * 10.0, y * 10.0, z),
                opacity,
                color: Vec3::new(r, g, b),
                sh: None,
            })
            .collect();
        let bg = Vec3::new(0.1, 0.2, 0.3);
        let (image, map, _) = render_primitives(&prims, &camera(), bg);
        let colors: Vec<Vec3> = prims.iter().map(|p| p.color).collect();
        prop_assert!(max_diff(&map.reconstruct(&colors, bg), &image) <= 1e-12);

        // the image is linear in colors: a re-render with new colors equals the reconstruction
        let new: Vec<Vec3> = recolor.iter().take(prims.len()).map(|&(r, g, b)| Vec3::new(r, g, b)).collect();
        let repainted: Vec<GaussianPrimitive> = prims
            .iter()
            .zip(&new)
            .map(|(p, c)| GaussianPrimitive { color: *c, ..p.clone() })
            .collect();
        let (again, _, _) = render_primitives(&repainted, &camera(), bg);
        prop_assert!(max_diff(&map.reconstruct(&new, bg), &again) <= 1e-12);
    }
}

#[test]
fn degenerate_splats_are_skipped() {
    let bad = Splat2D {
        mean: Vector2::new(10.0, 10.0),
        cov: Matrix2::zeros(),
        depth: 1.0,
        color: Vec3::x(),
        opacity: 1.0,
        source: 0,
    };
    let nan = Splat2D {
        mean: Vector2::new(f64::NAN, 1.0),
        cov: Matrix2::identity(),
        source: 1,
        ..bad
    };
    let (image, stats) = rasterize(&[bad, nan], &camera(), Vec3::zeros());
    assert_eq!(stats.skipped, 2);
    assert!(image.pixels.iter().all(|p| *p == Vec3::zeros()));
}

#[test]
fn splats_behind_the_camera_are_culled() {
    let p = GaussianPrimitive {
        mean: Vec3::new(0.0, 0.0, -1.0),
        scale: Vec3::repeat(0.1),
        rotation: UnitQuaternion::identity(),
        opacity: 1.0,
        color: Vec3::x(),
        sh: None,
    };
    let (image, map, stats) = render_primitives(&[p], &camera(), Vec3::zeros());
    assert_eq!(stats.splats, 0);
    assert!(map.entries.is_empty());
    assert!(image.pixels.iter().all(|p| *p == Vec3::zeros()));
}
