use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{
    backproject_pixels, valid_segment_pixels, CameraIntrinsics, ColorImage, DepthMap, GeometryError, LabelMap,
    PointCloud,
};
use crate::numerics::{BoundParams, Graph, Tensor, Var};

use super::layers::{linear, linear_relu};
use super::{EncoderConfig, NetworkError, Result};

/// Valid segment pixels paired with their back-projected points.
#[derive(Clone, Debug, PartialEq)]
pub struct Correspondences {
    /// Row-major image indices; may repeat when the segment is small.
    pub pixels: Vec<usize>,
    pub points: PointCloud,
}

/// Picks `n` valid pixels of one object's segment: without replacement when
/// the segment has at least `n`, otherwise every pixel once plus uniform
/// draws for the remainder.
pub fn select_correspondences(
    mask: &LabelMap,
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
    object_id: u8,
    n: usize,
    seed: u64,
) -> Result<Correspondences> {
    let valid = valid_segment_pixels(depth, mask, object_id);
    if valid.is_empty() {
        return Err(GeometryError::EmptySegment.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels: Vec<usize> = if valid.len() >= n {
        index::sample(&mut rng, valid.len(), n)
            .iter()
            .map(|i| valid[i])
            .collect()
    } else {
        let mut p = valid.clone();
        while p.len() < n {
            p.push(valid[rng.gen_range(0..valid.len())]);
        }
        p
    };
    let points = backproject_pixels(depth, intrinsics, &pixels);
    Ok(Correspondences { pixels, points })
}

/// Padding around the selected pixels' bounding box.
const CROP_MARGIN: usize = 3;

/// A color patch normalized to `[-0.5, 0.5]`, with the crop-relative index
/// of each selected pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorCrop {
    pub width: usize,
    pub height: usize,
    /// `[height·width, 3]`.
    pub pixels: Tensor,
    pub rows: Vec<usize>,
}

/// Crops the bounding box (plus a small margin) of `image_pixels`.
pub fn color_crop(color: &ColorImage, image_pixels: &[usize]) -> ColorCrop {
    let w = color.width;
    let (mut u0, mut v0, mut u1, mut v1) = (usize::MAX, usize::MAX, 0, 0);
    for &i in image_pixels {
        let (u, v) = (i % w, i / w);
        u0 = u0.min(u);
        v0 = v0.min(v);
        u1 = u1.max(u);
        v1 = v1.max(v);
    }
    let u0 = u0.saturating_sub(CROP_MARGIN);
    let v0 = v0.saturating_sub(CROP_MARGIN);
    let u1 = (u1 + CROP_MARGIN).min(w - 1);
    let v1 = (v1 + CROP_MARGIN).min(color.height - 1);
    let (cw, ch) = (u1 - u0 + 1, v1 - v0 + 1);
    let mut data = Vec::with_capacity(cw * ch * 3);
    for v in v0..=v1 {
        for u in u0..=u1 {
            data.extend(color.get(u, v).iter().map(|&c| c as f64 / 255.0 - 0.5));
        }
    }
    let rows = image_pixels.iter().map(|&i| (i / w - v0) * cw + (i % w - u0)).collect();
    ColorCrop {
        width: cw,
        height: ch,
        pixels: Tensor::new(vec![cw * ch, 3], data).expect("sized"),
        rows,
    }
}

/// Crop pixels whose 3×3 replicate-padded neighbourhoods touch `rows`,
/// sorted.
fn dilate(rows: &[usize], width: usize, height: usize) -> Vec<usize> {
    let mut hit = vec![false; width * height];
    for &r in rows {
        let (u, v) = ((r % width) as isize, (r / width) as isize);
        for dv in [-1isize, 0, 1] {
            for du in [-1isize, 0, 1] {
                let su = (u + du).clamp(0, width as isize - 1) as usize;
                let sv = (v + dv).clamp(0, height as isize - 1) as usize;
                hit[sv * width + su] = true;
            }
        }
    }
    (0..width * height).filter(|&i| hit[i]).collect()
}

/// im2col indices of a 3×3 stride-1 convolution with replicate padding,
/// evaluated at crop pixels `out_rows` over an input holding `in_rows`
/// (sorted, covering every needed neighbour) with `channels` columns each.
/// Column `k·channels + ch` of an output row holds neighbour `k`.
fn conv3x3_index(out_rows: &[usize], in_rows: &[usize], width: usize, height: usize, channels: usize) -> Vec<usize> {
    let mut slot = vec![usize::MAX; width * height];
    for (i, &r) in in_rows.iter().enumerate() {
        slot[r] = i;
    }
    let mut idx = Vec::with_capacity(out_rows.len() * 9 * channels);
    for &r in out_rows {
        let (u, v) = ((r % width) as isize, (r / width) as isize);
        for dv in [-1isize, 0, 1] {
            for du in [-1isize, 0, 1] {
                let su = (u + du).clamp(0, width as isize - 1) as usize;
                let sv = (v + dv).clamp(0, height as isize - 1) as usize;
                let base = slot[sv * width + su] * channels;
                idx.extend(base..base + channels);
            }
        }
    }
    idx
}

/// Dense per-pixel embedding of the crop, gathered at the selected pixels.
/// Each conv layer is evaluated only on the receptive field of the
/// selected pixels, which gives the same values as the full feature map.
pub fn encode_color(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &EncoderConfig,
    crop: &ColorCrop,
    crop_pixels: Var,
) -> Result<Var> {
    let (w, h) = (crop.width, crop.height);
    if let Some(&bad) = crop.rows.iter().find(|&&r| r >= w * h) {
        return Err(NetworkError::PixelOutOfCrop {
            u: bad % w,
            v: bad / w,
            width: w,
            height: h,
        });
    }
    let mut selected = crop.rows.clone();
    selected.sort_unstable();
    selected.dedup();
    let l2 = dilate(&selected, w, h);
    let l1 = dilate(&l2, w, h);
    let all: Vec<usize> = (0..w * h).collect();
    let stages = [(&all, &l1), (&l1, &l2), (&l2, &selected)];

    let mut x = crop_pixels;
    let mut channels = 3;
    for (layer, (ins, outs)) in stages.into_iter().enumerate() {
        let index = conv3x3_index(outs, ins, w, h, channels);
        let cols = g.gather(x, index, &[outs.len(), 9 * channels])?;
        x = linear_relu(g, p, &format!("color.conv{layer}"), cols)?;
        channels = cfg.color_channels;
    }
    let emb = linear(g, p, "color.proj", x)?;
    let rows: Vec<usize> = crop
        .rows
        .iter()
        .map(|r| selected.binary_search(r).expect("selected pixel"))
        .collect();
    Ok(g.gather_rows(emb, &rows)?)
}

pub struct GeometryEncoding {
    /// `[N, d1 + d2 + d3]`: latent, early and broadcast global features.
    pub tokens: Var,
    /// `[d3]` max-pooled global feature.
    pub global: Var,
    /// Decoder output in the same normalized frame as the input.
    pub decoded: Var,
}

/// Shared-MLP point encoder with max-pooled global feature and a per-point
/// decoder. `points` is `[N, 3]`, already centered and scaled.
pub fn encode_geometry(g: &mut Graph, p: &BoundParams, cfg: &EncoderConfig, points: Var) -> Result<GeometryEncoding> {
    let n = g.shape(points)[0];
    let early = linear_relu(g, p, "geo.early", points)?;
    let latent = linear_relu(g, p, "geo.latent0", early)?;
    let latent = linear_relu(g, p, "geo.latent1", latent)?;
    let pre_pool = linear_relu(g, p, "geo.global", latent)?;
    let global = g.max_axis(pre_pool, 0)?;
    let ones = g.constant(Tensor::ones(&[n, 1]));
    let global_row = g.reshape(global, &[1, cfg.d3])?;
    let broadcast = g.matmul(ones, global_row)?;
    let tokens = g.concat(&[latent, early, broadcast], 1)?;

    let h = linear_relu(g, p, "geo.dec0", tokens)?;
    let offset = linear(g, p, "geo.dec1", h)?;
    let decoded = g.add(points, offset)?;
    Ok(GeometryEncoding {
        tokens,
        global,
        decoded,
    })
}

/// Floor inside the spectral magnitude so its derivative stays bounded.
const MAGNITUDE_EPS: f64 = 1e-12;

/// Frequency-domain filtering along the token axis: DFT of every channel,
/// one shared linear layer on the stacked (real, imag) spectrum followed by
/// a magnitude-shrinking nonlinearity, inverse DFT, real part.
pub fn gff(g: &mut Graph, p: &BoundParams, tokens: Var) -> Result<Var> {
    let (n, d) = {
        let s = g.shape(tokens);
        (s[0], s[1])
    };
    let zeros = g.constant(Tensor::zeros(&[n, d]));
    let complex = g.concat(&[tokens, zeros], 1)?;
    let spectrum = g.dft_rows(complex, false)?;
    let mixed = linear(g, p, "gff", spectrum)?;

    let re = g.slice_cols(mixed, 0, d)?;
    let im = g.slice_cols(mixed, d, 2 * d)?;
    let re2 = g.mul(re, re)?;
    let im2 = g.mul(im, im)?;
    let mag2 = g.add(re2, im2)?;
    let eps = g.constant(Tensor::scalar(MAGNITUDE_EPS));
    let mag2 = g.add(mag2, eps)?;
    let mag = g.sqrt(mag2)?;
    let shrink = p.get("gff.shrink")?;
    let kept = g.add(mag, shrink)?;
    let kept = g.relu(kept);
    let factor = g.div(kept, mag)?;
    let re = g.mul(re, factor)?;
    let im = g.mul(im, factor)?;
    let filtered = g.concat(&[re, im], 1)?;

    let back = g.dft_rows(filtered, true)?;
    Ok(g.slice_cols(back, 0, d)?)
}
