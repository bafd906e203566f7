//! Finite-difference checks of every differentiable primitive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    grad_check, scaled_dot_product_attention, AttentionConfig, GradCheckReport, Graph, NumericsError, Tensor, Var,
    GATHER_ZERO, LAYER_NORM_EPS,
};

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], positive: bool) -> Tensor {
    let n = shape.iter().product();
    let (lo, hi) = if positive { (0.2, 2.0) } else { (-1.0, 1.0) };
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("consistent shape")
}

/// Reduces a tensor to a scalar with fixed non-uniform weights so every
/// output coordinate influences the check.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_t(&mut rng, g.shape(x), false);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

type Builder = fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>;

/// One entry per primitive: (name, input shapes, positive inputs?, builder).
fn cases() -> Vec<(&'static str, Vec<Vec<usize>>, bool, Builder)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], false, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, 1)
        }),
        ("matmul_nt", vec![vec![3, 4], vec![5, 4]], false, |g, v| {
            let y = g.matmul_nt(v[0], v[1])?;
            weighted_sum(g, y, 2)
        }),
        ("add_row", vec![vec![3, 4], vec![4]], false, |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, 3)
        }),
        ("sub_col", vec![vec![3, 4], vec![3, 1]], false, |g, v| {
            let y = g.sub(v[0], v[1])?;
            weighted_sum(g, y, 4)
        }),
        ("mul_scalar", vec![vec![3, 4], vec![1]], false, |g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, 5)
        }),
        ("div", vec![vec![3, 4], vec![3, 4]], true, |g, v| {
            let y = g.div(v[0], v[1])?;
            weighted_sum(g, y, 6)
        }),
        ("relu", vec![vec![4, 5]], false, |g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y, 7)
        }),
        ("sigmoid", vec![vec![4, 5]], false, |g, v| {
            let y = g.sigmoid(v[0]);
            weighted_sum(g, y, 8)
        }),
        ("log", vec![vec![4, 5]], true, |g, v| {
            let y = g.log(v[0])?;
            weighted_sum(g, y, 9)
        }),
        ("sqrt", vec![vec![4, 5]], true, |g, v| {
            let y = g.sqrt(v[0])?;
            weighted_sum(g, y, 10)
        }),
        ("exp", vec![vec![4, 5]], false, |g, v| {
            let y = g.exp(v[0]);
            weighted_sum(g, y, 11)
        }),
        ("softmax", vec![vec![3, 6]], false, |g, v| {
            let y = g.softmax(v[0]);
            weighted_sum(g, y, 12)
        }),
        ("layer_norm", vec![vec![3, 6]], false, |g, v| {
            let y = g.layer_norm(v[0], LAYER_NORM_EPS);
            weighted_sum(g, y, 13)
        }),
        ("concat0", vec![vec![2, 3], vec![4, 3]], false, |g, v| {
            let y = g.concat(&[v[0], v[1]], 0)?;
            weighted_sum(g, y, 14)
        }),
        ("concat1", vec![vec![3, 2], vec![3, 5]], false, |g, v| {
            let y = g.concat(&[v[0], v[1]], 1)?;
            weighted_sum(g, y, 15)
        }),
        ("reshape", vec![vec![3, 4]], false, |g, v| {
            let y = g.reshape(v[0], &[2, 6])?;
            weighted_sum(g, y, 16)
        }),
        ("transpose", vec![vec![3, 4]], false, |g, v| {
            let y = g.transpose(v[0])?;
            weighted_sum(g, y, 17)
        }),
        ("slices", vec![vec![5, 6]], false, |g, v| {
            let a = g.slice_cols(v[0], 1, 4)?;
            let b = g.slice_rows(a, 2, 5)?;
            weighted_sum(g, b, 18)
        }),
        ("max_axis0", vec![vec![6, 4]], false, |g, v| {
            let y = g.max_axis(v[0], 0)?;
            weighted_sum(g, y, 19)
        }),
        ("max_axis1", vec![vec![6, 4]], false, |g, v| {
            let y = g.max_axis(v[0], 1)?;
            weighted_sum(g, y, 20)
        }),
        ("mean", vec![vec![6, 4]], false, |g, v| {
            let y = g.mul(v[0], v[0])?;
            Ok(g.mean(y))
        }),
        ("mean_axis", vec![vec![6, 4]], false, |g, v| {
            let y = g.mean_axis(v[0], 1)?;
            weighted_sum(g, y, 21)
        }),
        ("sum_axis", vec![vec![6, 4]], false, |g, v| {
            let y = g.sum_axis(v[0], 0)?;
            weighted_sum(g, y, 22)
        }),
        ("gather", vec![vec![3, 4]], false, |g, v| {
            let idx = vec![0, 5, 5, GATHER_ZERO, 11, 2];
            let y = g.gather(v[0], idx, &[2, 3])?;
            weighted_sum(g, y, 23)
        }),
        ("dft", vec![vec![8, 6]], false, |g, v| {
            let y = g.dft_rows(v[0], false)?;
            weighted_sum(g, y, 24)
        }),
        ("idft", vec![vec![6, 4]], false, |g, v| {
            let y = g.dft_rows(v[0], true)?;
            weighted_sum(g, y, 25)
        }),
        ("chamfer", vec![vec![7, 3], vec![5, 3]], false, |g, v| {
            g.chamfer(v[0], v[1])
        }),
        ("nearest_mean_dist", vec![vec![3, 12], vec![4, 3]], false, |g, v| {
            let y = g.nearest_mean_dist(v[0], v[1])?;
            weighted_sum(g, y, 26)
        }),
        ("attention", vec![vec![5, 4], vec![5, 4], vec![5, 4]], false, |g, v| {
            let cfg = AttentionConfig::new(4, 2)?;
            let out = scaled_dot_product_attention(g, v[0], v[1], v[2], &cfg)?;
            weighted_sum(g, out.output, 28)
        }),
        ("scale_neg", vec![vec![2, 3]], false, |g, v| {
            let y = g.scale(v[0], 2.5);
            let y = g.neg(y);
            weighted_sum(g, y, 27)
        }),
    ]
}

/// Checks every primitive at one random point drawn from `seed`.
pub fn primitive_gradchecks(seed: u64, h: f64) -> Result<Vec<(&'static str, GradCheckReport)>, NumericsError> {
    cases()
        .into_iter()
        .map(|(name, shapes, positive, build)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_t(&mut rng, s, positive)).collect();
            Ok((name, grad_check::<NumericsError, _>(build, &inputs, h)?))
        })
        .collect()
}
