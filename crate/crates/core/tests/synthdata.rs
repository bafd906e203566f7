use dttd_core::geometry::{render_reference_depth, RgbdFrame};
use dttd_core::metrics::{depth_add_frame, DepthAdd};
use dttd_core::synthdata::{
    calibrate_noise, cube_spec, generate_scene, inject_depth_noise, make_object, measure_depth_add, multi_object_spec,
    sample_scene, NoiseModel, Shape, SynthError, SURFACE_POINTS,
};
use proptest::prelude::*;

fn gaussian_only(sigma: f64) -> NoiseModel {
    NoiseModel {
        gaussian_sigma: sigma,
        ..NoiseModel::none()
    }
}

fn excess_kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// Depth differences over object pixels.
fn object_depth_errors(clean: &[RgbdFrame], noisy: &[RgbdFrame]) -> Vec<f64> {
    clean
        .iter()
        .zip(noisy)
        .flat_map(|(c, n)| {
            c.mask
                .data
                .iter()
                .enumerate()
                .filter(|(_, &m)| m != 0)
                .map(|(i, _)| n.depth.data[i] - c.depth.data[i])
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn unit_cube_diameter() {
    let m = make_object(1, "unit", Shape::Cube { side: 1.0 }, 0).unwrap();
    assert!(m.surface.len() >= 10_000);
    assert!((m.diameter - 3f64.sqrt()).abs() < 0.01 * 3f64.sqrt());
}

#[test]
fn sphere_points_on_radius() {
    let r = 0.0731;
    let m = make_object(2, "ball", Shape::Sphere { radius: r }, 5).unwrap();
    assert_eq!(m.surface.len(), SURFACE_POINTS);
    for p in &m.surface.points {
        assert!((p.norm() - r).abs() < 1e-9);
    }
    assert!(m.symmetric);
}

#[test]
fn objects_and_scenes_are_deterministic() {
    let a = make_object(
        3,
        "c",
        Shape::Cylinder {
            radius: 0.03,
            height: 0.1,
        },
        9,
    )
    .unwrap();
    let b = make_object(
        3,
        "c",
        Shape::Cylinder {
            radius: 0.03,
            height: 0.1,
        },
        9,
    )
    .unwrap();
    assert_eq!(a, b);
    let mut spec = multi_object_spec(21, 4);
    spec.noise = NoiseModel::default();
    assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
}

#[test]
fn bad_specs_are_rejected() {
    let mut spec = cube_spec(0, 1);
    spec.objects[0].translation_min[2] = 0.0;
    assert!(matches!(generate_scene(&spec), Err(SynthError::Spec(_))));
    assert!(make_object(1, "x", Shape::Cube { side: -1.0 }, 0).is_err());

    let mut spec = cube_spec(0, 1);
    spec.objects[0].translation_min = [10.0, 10.0, 1.0];
    spec.objects[0].translation_max = [10.0, 10.0, 1.0];
    assert!(matches!(
        generate_scene(&spec),
        Err(SynthError::Placement { attempts: 100, .. })
    ));
}

#[test]
fn clean_frames_match_reference_render() {
    let scene = generate_scene(&multi_object_spec(3, 6)).unwrap();
    for f in &scene.frames {
        for (i, &m) in f.mask.data.iter().enumerate() {
            if m != 0 {
                assert!(f.depth.data[i] > 0.0);
            }
        }
        for m in &scene.models {
            let reference = render_reference_depth(m, &f.gt_poses[&m.id], &f.intrinsics, &f.mask, m.id);
            match depth_add_frame(&f.depth, &reference, &f.mask, m.id).unwrap() {
                DepthAdd::Value(v) => assert!(v <= 0.0005 + 1e-12, "frame {} object {}: {v}", f.id, m.id),
                DepthAdd::NoOverlap => panic!("object {} invisible in frame {}", m.id, f.id),
            }
        }
    }
}

#[test]
fn nearer_object_owns_each_pixel() {
    let scene = generate_scene(&multi_object_spec(8, 12)).unwrap();
    let mut contested = 0;
    for f in &scene.frames {
        let k = f.intrinsics;
        // Independent splat of every object over the full image.
        let mut nearest = vec![(f64::INFINITY, 0u8); k.width * k.height];
        let mut covered = vec![0u32; k.width * k.height];
        for m in &scene.models {
            let pose = f.gt_poses[&m.id];
            let mut hit = vec![false; k.width * k.height];
            for p in &m.surface.points {
                let q = pose.apply(p);
                if let Some((u, v)) = k.project_pixel(&q) {
                    let i = v * k.width + u;
                    hit[i] = true;
                    if q.z < nearest[i].0 {
                        nearest[i] = (q.z, m.id);
                    }
                }
            }
            for (c, h) in covered.iter_mut().zip(hit) {
                *c += h as u32;
            }
        }
        for i in 0..nearest.len() {
            let (_, owner) = nearest[i];
            if owner != 0 && f.depth.data[i] < nearest[i].0 - 0.001 {
                // Background plane in front of the object.
                assert_eq!(f.mask.data[i], 0);
                continue;
            }
            assert_eq!(f.mask.data[i], owner, "frame {} pixel {i}", f.id);
            contested += (covered[i] > 1) as usize;
        }
    }
    assert!(contested > 0, "no overlapping objects in the test scenes");
}

#[test]
fn zero_noise_is_identity() {
    let scene = generate_scene(&cube_spec(5, 3)).unwrap();
    for f in &scene.frames {
        assert_eq!(&inject_depth_noise(f, &NoiseModel::none()), f);
    }
}

#[test]
fn gaussian_noise_depth_add_is_half_normal_mean() {
    let scene = generate_scene(&cube_spec(6, 10)).unwrap();
    let noisy: Vec<_> = scene
        .frames
        .iter()
        .map(|f| inject_depth_noise(f, &gaussian_only(0.01)))
        .collect();
    let pixels: usize = scene
        .frames
        .iter()
        .map(|f| f.mask.data.iter().filter(|&&m| m != 0).count())
        .sum();
    assert!(pixels >= 10_000, "{pixels} pixels");
    let expected = 0.01 * (2.0 / std::f64::consts::PI).sqrt();
    let got = measure_depth_add(&noisy, &scene.models).unwrap();
    assert!((got - expected).abs() < 0.1 * expected, "{got} vs {expected}");
}

#[test]
fn outliers_produce_heavy_tails() {
    let scene = generate_scene(&cube_spec(7, 10)).unwrap();
    let run = |noise: NoiseModel| {
        let noisy: Vec<_> = scene.frames.iter().map(|f| inject_depth_noise(f, &noise)).collect();
        excess_kurtosis(&object_depth_errors(&scene.frames, &noisy))
    };
    let heavy = run(NoiseModel {
        seed: 1,
        ..NoiseModel::default()
    });
    let light = run(NoiseModel {
        seed: 1,
        ..gaussian_only(0.005)
    });
    assert!(heavy > 1.0, "kurtosis with outliers {heavy}");
    assert!(light < 0.5, "kurtosis gaussian only {light}");
}

#[test]
fn calibration_hits_targets() {
    let scene = generate_scene(&multi_object_spec(9, 12)).unwrap();
    for target in [0.05, 0.25] {
        let (noise, measured) = calibrate_noise(target, &NoiseModel::default(), &scene.frames, &scene.models).unwrap();
        assert!((measured - target).abs() <= 0.05 * target, "{target}: {measured}");
        let noisy: Vec<_> = scene.frames.iter().map(|f| inject_depth_noise(f, &noise)).collect();
        let again = measure_depth_add(&noisy, &scene.models).unwrap();
        assert_eq!(again, measured);
    }
}

#[test]
fn calibration_fixed_point_and_unreachable() {
    let scene = generate_scene(&cube_spec(10, 6)).unwrap();
    let base = NoiseModel::default();
    let noisy: Vec<_> = scene.frames.iter().map(|f| inject_depth_noise(f, &base)).collect();
    let current = measure_depth_add(&noisy, &scene.models).unwrap();
    let (noise, _) = calibrate_noise(current, &base, &scene.frames, &scene.models).unwrap();
    assert!((noise.gaussian_sigma - base.gaussian_sigma).abs() <= 0.05 * base.gaussian_sigma);
    assert!((noise.outlier_scale - base.outlier_scale).abs() <= 0.05 * base.outlier_scale);

    match calibrate_noise(0.05, &NoiseModel::none(), &scene.frames, &scene.models) {
        Err(SynthError::Unreachable { achieved, .. }) => assert!(achieved < 0.001),
        other => panic!("expected unreachable, got {other:?}"),
    }
}

#[test]
fn depth_add_monotone_in_each_knob() {
    let scene = generate_scene(&cube_spec(11, 4)).unwrap();
    let measure = |n: NoiseModel| {
        let noisy: Vec<_> = scene.frames.iter().map(|f| inject_depth_noise(f, &n)).collect();
        measure_depth_add(&noisy, &scene.models).unwrap()
    };
    let base = NoiseModel::default();
    type Grid = (&'static str, fn(&mut NoiseModel, f64), [f64; 3]);
    let grids: [Grid; 3] = [
        ("gaussian_sigma", |n, v| n.gaussian_sigma = v, [0.0, 0.005, 0.02]),
        ("outlier_prob", |n, v| n.outlier_prob = v, [0.0, 0.05, 0.2]),
        ("outlier_scale", |n, v| n.outlier_scale = v, [0.0, 0.05, 0.2]),
    ];
    for (name, set, grid) in grids {
        let vals: Vec<f64> = grid
            .iter()
            .map(|&v| {
                let mut n = base;
                set(&mut n, v);
                measure(n)
            })
            .collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]), "{name}: {vals:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn noise_never_negative(sigma in 0.0f64..1.0, prob in 0.0f64..1.0, scale in 0.0f64..2.0, seed in any::<u64>()) {
        let spec = cube_spec(seed % 7, 1);
        let models = spec.build_models().unwrap();
        let frame = sample_scene(&spec, &models, 0).unwrap();
        let noise = NoiseModel {
            gaussian_sigma: sigma,
            outlier_prob: prob,
            outlier_scale: scale,
            edge_band_px: 2,
            edge_corruption_prob: prob,
            seed,
        };
        let noisy = inject_depth_noise(&frame, &noise);
        prop_assert!(noisy.depth.data.iter().all(|&d| d >= 0.0));
        prop_assert_eq!(&noisy, &inject_depth_noise(&frame, &noise));
    }
}
