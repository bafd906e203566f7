use dttd_core::dataio::decode_pgm8;
use dttd_core::geometry::CameraIntrinsics;
use dttd_core::network::{forward, EncoderConfig, Model, ModelConfig};
use dttd_core::numerics::Tensor;
use dttd_core::synthdata::{cube_spec, generate_scene, SceneSpec};
use dttd_harness::analysis::{
    attention_image, center, covariance, export_attention_maps, pca_token_histogram, token_histogram, DEFAULT_BINS,
};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tokens whose column `j` is scaled by `scales[j]`, so the spectrum is
/// well separated.
fn anisotropic_tokens(n: usize, scales: &[f64], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = scales.len();
    let data = (0..n * d)
        .map(|i| rng.gen_range(-1.0..1.0) * scales[i % d] + 0.3)
        .collect();
    Tensor::new(vec![n, d], data).unwrap()
}

fn dense_top_eigenvector(tokens: &Tensor) -> Vec<f64> {
    let (n, d) = (tokens.shape()[0], tokens.shape()[1]);
    let x = DMatrix::from_row_slice(n, d, &center(tokens).unwrap());
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imax();
    eig.eigenvectors.column(k).iter().copied().collect()
}

#[test]
fn power_iteration_matches_dense_eigensolver() {
    for seed in 0..5 {
        let tokens = anisotropic_tokens(200, &[0.2, 1.5, 0.7, 0.4, 0.1, 0.9], seed);
        let h = token_histogram(&tokens, DEFAULT_BINS).unwrap();
        let oracle = dense_top_eigenvector(&tokens);
        let cos: f64 = h.direction.iter().zip(&oracle).map(|(a, b)| a * b).sum();
        assert!((cos.abs() - 1.0).abs() < 1e-8, "seed {seed}: |cos| {}", cos.abs());
    }
}

#[test]
fn collinear_tokens_keep_all_variance() {
    let dir = [0.3, -0.5, 0.8, 0.1];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f64> = (0..50)
        .flat_map(|_| {
            let t: f64 = rng.gen_range(-2.0..2.0);
            dir.map(|d| 1.0 + t * d)
        })
        .collect();
    let tokens = Tensor::new(vec![50, 4], data).unwrap();
    let h = token_histogram(&tokens, 10).unwrap();
    assert!((h.projected_variance - h.total_variance).abs() <= 1e-12 * h.total_variance);
}

#[test]
fn degenerate_inputs_are_errors() {
    let flat = Tensor::new(vec![5, 3], vec![0.7; 15]).unwrap();
    assert!(token_histogram(&flat, 10).is_err());
    let single = Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap();
    assert!(token_histogram(&single, 10).is_err());
}

#[test]
fn covariance_matches_dense_product() {
    let tokens = anisotropic_tokens(30, &[1.0, 2.0, 0.5], 9);
    let c = covariance(&center(&tokens).unwrap(), 30, 3);
    let x = DMatrix::from_row_slice(30, 3, &center(&tokens).unwrap());
    let dense = x.transpose() * &x / 30.0;
    for i in 0..3 {
        for j in 0..3 {
            assert!((c[i * 3 + j] - dense[(i, j)]).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn histogram_masses_sum_to_one(seed in any::<u64>(), n in 2usize..120, bins in 1usize..80) {
        let tokens = anisotropic_tokens(n, &[1.0, 0.3, 0.05], seed);
        let h = token_histogram(&tokens, bins).unwrap();
        prop_assert_eq!(h.mass.len(), bins);
        prop_assert_eq!(h.edges.len(), bins + 1);
        prop_assert!((h.mass.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

fn small_scene() -> dttd_core::geometry::Scene {
    generate_scene(&SceneSpec {
        intrinsics: CameraIntrinsics {
            fx: 110.0,
            fy: 110.0,
            cx: 40.0,
            cy: 30.0,
            width: 80,
            height: 60,
        },
        ..cube_spec(2, 1)
    })
    .unwrap()
}

#[test]
fn gff_tokens_give_two_histograms() {
    let scene = small_scene();
    let model = Model::init(ModelConfig::toy(), 1).unwrap();
    let out = forward(&model, &scene.frames[0], 1, 0).unwrap();
    let after = out.intermediates.tokens_after_gff.as_ref().unwrap();
    let (b, a) = pca_token_histogram(&out.intermediates.tokens_before_gff, after, DEFAULT_BINS).unwrap();
    assert_eq!(b.mass.len(), 50);
    assert!(b.excess_kurtosis.is_finite() && a.excess_kurtosis.is_finite());
}

#[test]
fn attention_maps_have_fusion_sizes() {
    let scene = small_scene();
    let model = Model::init(ModelConfig::toy(), 1).unwrap();
    let n = model.config.encoder.n_points;
    let out = forward(&model, &scene.frames[0], 1, 0).unwrap();
    for map in &out.intermediates.modality_attention {
        assert_eq!(map.shape(), &[2 * n, 2 * n]);
        for r in 0..2 * n {
            let s: f64 = map.data()[r * 2 * n..(r + 1) * 2 * n].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
    for map in &out.intermediates.pointwise_attention {
        assert_eq!(map.shape(), &[n, n]);
    }
    let dir = tempfile::tempdir().unwrap();
    let written = export_attention_maps(&out.intermediates, dir.path(), "").unwrap();
    let heads = model.config.fusion.modality_heads + model.config.fusion.pointwise_heads;
    assert_eq!(written.len(), heads);
    let img = decode_pgm8(&std::fs::read(&written[0]).unwrap(), &written[0]).unwrap();
    assert_eq!((img.width, img.height), (2 * n, 2 * n));
    assert_eq!(img.data.iter().copied().max(), Some(255));
}

#[test]
fn single_token_maps_saturate() {
    let scene = small_scene();
    let mut cfg = ModelConfig::toy();
    cfg.encoder = EncoderConfig {
        n_points: 1,
        ..cfg.encoder
    };
    let model = Model::init(cfg, 4).unwrap();
    let out = forward(&model, &scene.frames[0], 1, 0).unwrap();
    for map in &out.intermediates.pointwise_attention {
        let img = attention_image(map).unwrap();
        assert_eq!((img.width, img.height, img.data.clone()), (1, 1, vec![255]));
    }
    for map in &out.intermediates.modality_attention {
        let img = attention_image(map).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        // Each row is a distribution over two tokens; its larger weight
        // scales to at least half of the map maximum.
        for r in 0..2 {
            assert!(img.data[2 * r].max(img.data[2 * r + 1]) >= 127);
        }
        assert_eq!(img.data.iter().copied().max(), Some(255));
    }
}
