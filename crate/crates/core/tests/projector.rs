use fluorosynth::image::Image2D;
use fluorosynth::projector::{
    hu_to_attenuation, make_phantom, normalize_ray_sums, project_drr, ray_box, ray_sum,
    simulate_fpd, AttenuationVolume, Ellipsoid, FpdSimSpec, PhantomSpec, ProjectionGeometry,
    Sphere, VolumeGrid, MU_WATER,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cube_100mm(mu: f32) -> AttenuationVolume {
    AttenuationVolume::uniform(VolumeGrid::centered([50; 3], [2.0; 3]), mu).unwrap()
}

fn unit(from: [f64; 3], to: [f64; 3]) -> [f64; 3] {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    [d[0] / n, d[1] / n, d[2] / n]
}

/// Exact chord through an axis-aligned box, by slab clipping written out here
/// independently of the projector.
fn chord_oracle(o: [f64; 3], d: [f64; 3], half: f64) -> f64 {
    let mut enter = f64::NEG_INFINITY;
    let mut leave = f64::INFINITY;
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a].abs() > half {
                return 0.0;
            }
            continue;
        }
        let t1 = (-half - o[a]) / d[a];
        let t2 = (half - o[a]) / d[a];
        enter = enter.max(t1.min(t2));
        leave = leave.min(t1.max(t2));
    }
    (leave - enter.max(0.0)).max(0.0)
}

fn small_geometry(cols: usize, rows: usize, pitch: f64) -> ProjectionGeometry {
    ProjectionGeometry {
        detector_cols: cols,
        detector_rows: rows,
        pixel_pitch_mm: pitch,
        ..ProjectionGeometry::default()
    }
}

#[test]
fn central_ray_through_cube_matches_analytic_integral() {
    let g = small_geometry(2, 2, 1.0);
    let q = ray_sum(&cube_100mm(0.02), g.source(), [0.0, 1.0, 0.0], g.step_mm);
    assert!((q - 2.0).abs() / 2.0 < 0.01, "q = {q}");

    // The same ray through the full projector: the four central pixels of an
    // even detector straddle the axis by half a pitch.
    let img = project_drr(&cube_100mm(0.02), &small_geometry(2, 2, 0.1)).unwrap();
    for &v in img.data() {
        assert!((v as f64 - 2.0).abs() / 2.0 < 0.01, "{v}");
    }
}

#[test]
fn oblique_rays_match_chord_length_oracle() {
    let vol = cube_100mm(0.02);
    let g = small_geometry(33, 33, 5.0);
    let img = project_drr(&vol, &g).unwrap();
    let src = g.source();
    let mut checked = 0;
    for row in 0..g.detector_rows {
        for col in 0..g.detector_cols {
            let d = unit(src, g.pixel_center(col, row));
            let chord = chord_oracle(src, d, 50.0);
            // Rays that only graze a corner are dominated by the last partial step.
            if chord < 20.0 {
                continue;
            }
            let expect = 0.02 * chord;
            let got = img.get(col, row) as f64;
            assert!(
                (got - expect).abs() / expect < 0.015,
                "pixel ({col},{row}): {got} vs {expect}"
            );
            checked += 1;
        }
    }
    assert!(checked > 500, "{checked}");
}

#[test]
fn ray_box_agrees_with_oracle_on_random_rays() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let o = [
            rng.random_range(-300.0..300.0),
            rng.random_range(-300.0..-120.0),
            rng.random_range(-300.0..300.0),
        ];
        let target = [
            rng.random_range(-60.0..60.0),
            0.0,
            rng.random_range(-60.0..60.0),
        ];
        let d = unit(o, target);
        let chord = chord_oracle(o, d, 50.0);
        let got = ray_box(o, d, [-50.0; 3], [50.0; 3]).map_or(0.0, |(t0, t1)| t1 - t0);
        assert!((got - chord).abs() < 1e-9, "{got} vs {chord}");
    }
}

fn random_volume(seed: u64) -> AttenuationVolume {
    let grid = VolumeGrid::centered([20, 18, 16], [5.0, 5.0, 6.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = (0..grid.len())
        .map(|_| rng.random_range(0.0..0.04f32))
        .collect();
    AttenuationVolume::new(grid, mu).unwrap()
}

#[test]
fn projection_is_linear_in_attenuation() {
    let (v1, v2) = (random_volume(1), random_volume(2));
    let (a, b) = (0.75f32, 1.5f32);
    let mix: Vec<f32> = v1
        .mu()
        .iter()
        .zip(v2.mu())
        .map(|(&x, &y)| a * x + b * y)
        .collect();
    let v3 = AttenuationVolume::new(*v1.grid(), mix).unwrap();

    let g = ProjectionGeometry {
        couch_roll_deg: 7.0,
        ..small_geometry(24, 20, 6.0)
    };
    let (q1, q2, q3) = (
        project_drr(&v1, &g).unwrap(),
        project_drr(&v2, &g).unwrap(),
        project_drr(&v3, &g).unwrap(),
    );
    let mut worst = 0f64;
    for i in 0..q3.data().len() {
        let expect = a as f64 * q1.data()[i] as f64 + b as f64 * q2.data()[i] as f64;
        let got = q3.data()[i] as f64;
        if expect > 1e-3 {
            worst = worst.max((got - expect).abs() / expect);
        }
    }
    assert!(worst < 1e-6, "worst relative deviation {worst}");

    // Single rays in f64, without the f32 image in between.
    let src = g.source();
    for (col, row) in [(12, 10), (3, 4), (20, 15)] {
        let d = unit(src, g.pixel_center(col, row));
        let s1 = ray_sum(&v1, src, d, 1.0);
        let s2 = ray_sum(&v2, src, d, 1.0);
        let s3 = ray_sum(&v3, src, d, 1.0);
        let expect = a as f64 * s1 + b as f64 * s2;
        assert!((s3 - expect).abs() / expect < 1e-6, "{s3} vs {expect}");
    }
}

#[test]
fn halving_the_step_barely_changes_cube_ray_sums() {
    let vol = cube_100mm(0.02);
    let g = small_geometry(9, 9, 12.0);
    let src = g.source();
    for row in 0..g.detector_rows {
        for col in 0..g.detector_cols {
            let d = unit(src, g.pixel_center(col, row));
            let coarse = ray_sum(&vol, src, d, 1.0);
            let fine = ray_sum(&vol, src, d, 0.5);
            assert!(coarse > 0.0);
            assert!(
                (coarse - fine).abs() / fine < 0.005,
                "({col},{row}) {coarse} vs {fine}"
            );
        }
    }
}

#[test]
fn halving_the_step_converges_on_a_phantom() {
    let mut spec = PhantomSpec::default();
    spec.tumor = None;
    spec.marker = None;
    let ct = make_phantom(&spec, [64, 48, 64], [4.0; 3]).unwrap();
    let vol = hu_to_attenuation(&ct, MU_WATER).unwrap();
    let g = small_geometry(16, 16, 18.0);
    let coarse = project_drr(&vol, &g).unwrap();
    let fine = project_drr(&vol, &ProjectionGeometry { step_mm: 0.5, ..g }).unwrap();
    let (sum_c, sum_f): (f64, f64) = (
        coarse.data().iter().map(|&v| v as f64).sum(),
        fine.data().iter().map(|&v| v as f64).sum(),
    );
    assert!((sum_c - sum_f).abs() / sum_f < 0.005, "{sum_c} vs {sum_f}");
}

#[test]
fn opposite_rolls_mirror_a_symmetric_phantom() {
    let mut spec = PhantomSpec::default();
    spec.tumor = None;
    spec.marker = None;
    let ct = make_phantom(&spec, [64, 48, 64], [4.0; 3]).unwrap();
    let vol = hu_to_attenuation(&ct, MU_WATER).unwrap();
    let base = small_geometry(48, 48, 6.0);
    let zero = project_drr(&vol, &base).unwrap();
    let q_max = zero.min_max().1 as f64;
    for roll in [5.0, 12.0, 20.0] {
        let plus = project_drr(
            &vol,
            &ProjectionGeometry {
                couch_roll_deg: roll,
                ..base
            },
        )
        .unwrap();
        let minus = project_drr(
            &vol,
            &ProjectionGeometry {
                couch_roll_deg: -roll,
                ..base
            },
        )
        .unwrap();
        let plus = normalize_ray_sums(&plus, q_max).unwrap();
        let minus = normalize_ray_sums(&minus, q_max).unwrap().flip_lr();
        let mean_abs: f64 = plus
            .data()
            .iter()
            .zip(minus.data())
            .map(|(&a, &b)| (a - b).abs() as f64)
            .sum::<f64>()
            / plus.data().len() as f64;
        assert!(mean_abs < 1e-3, "roll {roll}: {mean_abs}");
        assert_ne!(plus.data(), zero.data());
    }
}

#[test]
fn zero_roll_equals_unrolled_projection() {
    let vol = random_volume(3);
    let g = small_geometry(10, 10, 8.0);
    let a = project_drr(&vol, &g).unwrap();
    let b = project_drr(
        &vol,
        &ProjectionGeometry {
            couch_roll_deg: 0.0,
            ..g
        },
    )
    .unwrap();
    let c = project_drr(
        &vol,
        &ProjectionGeometry {
            couch_roll_deg: -0.0,
            ..g
        },
    )
    .unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(a.data(), c.data());
}

#[test]
fn tumor_voxel_count_matches_sphere_volume() {
    for (radius, spacing) in [(16.0, 2.0), (20.0, 2.0), (24.0, 3.0)] {
        let mut spec = PhantomSpec::body_only(Ellipsoid {
            center: [0.0; 3],
            radii: [60.0; 3],
            hu: 40.0,
        });
        spec.tumor = Some(Sphere {
            center: [1.3, -0.7, 0.4],
            radius,
            hu: 60.0,
        });
        let n = (130.0 / spacing) as usize;
        let ct = make_phantom(&spec, [n; 3], [spacing; 3]).unwrap();
        let count = ct.hu().iter().filter(|&&h| h == 60.0).count() as f64;
        let expect = 4.0 / 3.0 * std::f64::consts::PI * (radius / spacing).powi(3);
        assert!(
            (count - expect).abs() / expect < 0.05,
            "r {radius}, s {spacing}: {count} vs {expect}"
        );
    }
}

#[test]
fn phantom_generation_is_deterministic() {
    let spec = PhantomSpec::random_case(9);
    let a = make_phantom(&spec, [32; 3], [8.0; 3]).unwrap();
    let b = make_phantom(&spec, [32; 3], [8.0; 3]).unwrap();
    assert_eq!(a.to_fsvol(), b.to_fsvol());
    let c = make_phantom(&PhantomSpec::random_case(10), [32; 3], [8.0; 3]).unwrap();
    assert_ne!(a.to_fsvol(), c.to_fsvol());
}

#[test]
fn fpd_simulation_is_seeded() {
    let drr = Image2D::from_fn(48, 40, |x, y| ((x + 2 * y) as f32 / 140.0).min(1.0));
    let spec = FpdSimSpec {
        port_edge: true,
        call_cable: true,
        seed: 4,
        ..FpdSimSpec::default()
    };
    let a = simulate_fpd(&drr, &spec).unwrap();
    assert_eq!(a.data(), simulate_fpd(&drr, &spec).unwrap().data());
    assert_ne!(
        a.data(),
        simulate_fpd(
            &drr,
            &FpdSimSpec {
                seed: 5,
                ..spec.clone()
            }
        )
        .unwrap()
        .data()
    );
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ray_sum_scales_with_uniform_mu(mu in 0.001f32..0.1, x in -40.0f64..40.0, z in -40.0f64..40.0) {
        let g = small_geometry(2, 2, 1.0);
        let src = g.source();
        let d = unit(src, [x, 0.0, z]);
        let base = ray_sum(&cube_100mm(1.0), src, d, 1.0);
        let scaled = ray_sum(&cube_100mm(mu), src, d, 1.0);
        prop_assert!((scaled - mu as f64 * base).abs() <= 1e-6 * scaled.abs().max(1e-12));
    }

    #[test]
    fn ray_sums_are_non_negative(seed in 0u64..1000, col in 0usize..8, row in 0usize..8) {
        let vol = random_volume(seed);
        let g = small_geometry(8, 8, 20.0);
        let src = g.source();
        prop_assert!(ray_sum(&vol, src, unit(src, g.pixel_center(col, row)), 1.0) >= 0.0);
    }
}
