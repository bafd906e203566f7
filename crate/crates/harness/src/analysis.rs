use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dttd_core::dataio::{encode_pgm8, write_atomic};
use dttd_core::geometry::Image;
use dttd_core::network::Intermediates;
use dttd_core::numerics::Tensor;
use serde::Serialize;

use crate::error::{HarnessError, Result};

pub const DEFAULT_BINS: usize = 50;
pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITERATIONS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges spanning the projections.
    pub edges: Vec<f64>,
    /// Fraction of tokens per bin.
    pub mass: Vec<f64>,
    pub excess_kurtosis: f64,
    /// Variance of the 1-D projection.
    pub projected_variance: f64,
    /// Trace of the token covariance.
    pub total_variance: f64,
    /// Unit principal direction.
    pub direction: Vec<f64>,
}

fn rows(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n, d] => Ok((*n, *d)),
        s => Err(HarnessError::Validation(format!(
            "tokens must be a matrix, got shape {s:?}"
        ))),
    }
}

/// Tokens minus their column means, row major.
pub fn center(tokens: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = rows(tokens)?;
    let x = tokens.data();
    let mut means = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            means[c] += x[r * d + c];
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    Ok((0..n * d).map(|i| x[i] - means[i % d]).collect())
}

/// Population covariance `XᵀX / n` of centered rows.
pub fn covariance(centered: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d * d];
    for r in 0..n {
        let row = &centered[r * d..(r + 1) * d];
        for i in 0..d {
            for j in i..d {
                c[i * d + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            c[i * d + j] /= n as f64;
            c[j * d + i] = c[i * d + j];
        }
    }
    c
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    norm
}

/// Leading eigenvector of the symmetric `d×d` matrix `c` by power
/// iteration started from `start`.
pub fn power_iteration(c: &[f64], d: usize, start: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mut v = start.to_vec();
    if !(normalize(&mut v) > 0.0) {
        v = vec![1.0 / (d as f64).sqrt(); d];
    }
    let mut w = vec![0.0; d];
    for _ in 0..POWER_MAX_ITERATIONS {
        for i in 0..d {
            w[i] = (0..d).map(|j| c[i * d + j] * v[j]).sum();
        }
        let lambda = normalize(&mut w);
        if !(lambda > 0.0) {
            return Err(HarnessError::Validation(
                "covariance annihilates the start vector".into(),
            ));
        }
        let dot: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        if dot < 0.0 {
            w.iter_mut().for_each(|x| *x = -*x);
        }
        let change = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        std::mem::swap(&mut v, &mut w);
        if change < POWER_TOLERANCE {
            return Ok((v, lambda));
        }
    }
    Err(HarnessError::Failure(format!(
        "power iteration did not reach {POWER_TOLERANCE} in {POWER_MAX_ITERATIONS} iterations"
    )))
}

pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// Projects centered tokens on their top principal direction and bins the
/// projections.
pub fn token_histogram(tokens: &Tensor, bins: usize) -> Result<Histogram> {
    let (n, d) = rows(tokens)?;
    if n < 2 || d == 0 {
        return Err(HarnessError::Validation(format!("need at least 2 tokens, got {n}x{d}")));
    }
    if bins == 0 {
        return Err(HarnessError::Validation("bins must be positive".into()));
    }
    let x = center(tokens)?;
    let c = covariance(&x, n, d);
    let total_variance: f64 = (0..d).map(|i| c[i * d + i]).sum();
    if !(total_variance > 0.0) {
        return Err(HarnessError::Validation("tokens have zero variance".into()));
    }
    let start_row = (0..n)
        .max_by(|&a, &b| {
            let na: f64 = x[a * d..(a + 1) * d].iter().map(|v| v * v).sum();
            let nb: f64 = x[b * d..(b + 1) * d].iter().map(|v| v * v).sum();
            na.total_cmp(&nb)
        })
        .expect("n >= 2");
    let (direction, _) = power_iteration(&c, d, &x[start_row * d..(start_row + 1) * d])?;
    let proj: Vec<f64> = (0..n)
        .map(|r| x[r * d..(r + 1) * d].iter().zip(&direction).map(|(a, b)| a * b).sum())
        .collect();
    let projected_variance = proj.iter().map(|p| p * p).sum::<f64>() / n as f64;
    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![0usize; bins];
    for p in &proj {
        let k = if width > 0.0 { ((p - lo) / width) as usize } else { 0 };
        counts[k.min(bins - 1)] += 1;
    }
    Ok(Histogram {
        edges,
        mass: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        excess_kurtosis: excess_kurtosis(&proj),
        projected_variance,
        total_variance,
        direction,
    })
}

/// Histograms of the tokens entering and leaving the GFF block.
pub fn pca_token_histogram(before: &Tensor, after: &Tensor, bins: usize) -> Result<(Histogram, Histogram)> {
    Ok((token_histogram(before, bins)?, token_histogram(after, bins)?))
}

pub fn encode_histograms_csv(before: &Histogram, after: &Histogram) -> String {
    let mut s = String::from("stage,bin,lo,hi,mass\n");
    for (stage, h) in [("before_gff", before), ("after_gff", after)] {
        for (k, m) in h.mass.iter().enumerate() {
            writeln!(s, "{stage},{k},{},{},{m}", h.edges[k], h.edges[k + 1]).unwrap();
        }
    }
    s
}

/// 8-bit image of one attention map, scaled so the largest weight is 255.
pub fn attention_image(map: &Tensor) -> Result<Image<u8>> {
    let (h, w) = rows(map)?;
    let max = map.data().iter().copied().fold(0.0, f64::max);
    let data = map
        .data()
        .iter()
        .map(|&a| {
            if max > 0.0 {
                (255.0 * a / max).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    Ok(Image {
        width: w,
        height: h,
        data,
    })
}

/// Writes `<prefix>modality_head<h>.pgm` and `<prefix>pointwise_head<h>.pgm`
/// for the last layer of each fusion stage.
pub fn export_attention_maps(inter: &Intermediates, out: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (stage, maps) in [
        ("modality", &inter.modality_attention),
        ("pointwise", &inter.pointwise_attention),
    ] {
        for (h, map) in maps.iter().enumerate() {
            let path = out.join(format!("{prefix}{stage}_head{h}.pgm"));
            write_atomic(&path, &encode_pgm8(&attention_image(map)?))?;
            written.push(path);
        }
    }
    Ok(written)
}
