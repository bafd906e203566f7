//! Synthetic RGBD scenes: parametric textured objects, z-buffered point
//! splatting over a background plane, and a heavy-tailed depth noise model
//! with closed-loop calibration.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    render_reference_depth, CameraIntrinsics, ColorImage, DepthMap, GeometryError, LabelMap, ObjectModel, PointCloud,
    Pose, Quaternion, RgbdFrame, Scene, Vec3,
};
use crate::metrics::{depth_add_frame, DepthAdd};
use crate::seed::mix_seed;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("frame {frame}: object {object} not visible after {attempts} attempts")]
    Placement { frame: usize, object: u8, attempts: usize },
    #[error("noise calibration cannot reach depth-ADD {target} m (achieved {achieved} m)")]
    Unreachable { target: f64, achieved: f64 },
    #[error("no probe frame has a measurable object")]
    NoProbe,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Surface point budget of generated models.
pub const SURFACE_POINTS: usize = 30_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Cube { side: f64 },
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
    Box { x: f64, y: f64, z: f64 },
}

impl Shape {
    fn validate(&self) -> Result<()> {
        let dims: &[f64] = match self {
            Shape::Cube { side } => &[*side],
            Shape::Cylinder { radius, height } => &[*radius, *height],
            Shape::Sphere { radius } => &[*radius],
            Shape::Box { x, y, z } => &[*x, *y, *z],
        };
        if dims.iter().all(|d| *d > 0.0 && d.is_finite()) {
            Ok(())
        } else {
            Err(SynthError::Spec(format!("{self:?}: dimensions must be positive")))
        }
    }

    /// Half extents of the bounding box.
    fn half_extents(&self) -> Vec3 {
        match *self {
            Shape::Cube { side } => Vec3::repeat(side / 2.0),
            Shape::Cylinder { radius, height } => Vec3::new(radius, radius, height / 2.0),
            Shape::Sphere { radius } => Vec3::repeat(radius),
            Shape::Box { x, y, z } => Vec3::new(x, y, z) / 2.0,
        }
    }

    pub fn rotationally_symmetric(&self) -> bool {
        matches!(self, Shape::Cylinder { .. } | Shape::Sphere { .. })
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64)
}

/// Regular grid over the six faces, edges and corners included.
fn box_surface(h: Vec3, budget: usize) -> Vec<Vec3> {
    let area = 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z);
    let step = (area / budget as f64).sqrt();
    let n = |len: f64| ((2.0 * len / step).ceil() as usize + 1).max(2);
    let mut pts = Vec::new();
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for sign in [-1.0, 1.0] {
            for s in linspace(-h[a], h[a], n(h[a])) {
                for t in linspace(-h[b], h[b], n(h[b])) {
                    let mut p = Vec3::zeros();
                    p[axis] = sign * h[axis];
                    p[a] = s;
                    p[b] = t;
                    pts.push(p);
                }
            }
        }
    }
    pts
}

/// Fibonacci lattice: near-uniform and exactly on the sphere.
fn sphere_surface(r: f64, budget: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..budget)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / budget as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let d = Vec3::new(rho * phi.cos(), rho * phi.sin(), z);
            d / d.norm() * r
        })
        .collect()
}

fn cylinder_surface(r: f64, height: f64, budget: usize) -> Vec<Vec3> {
    let area = 2.0 * PI * r * height + 2.0 * PI * r * r;
    let step = (area / budget as f64).sqrt();
    let mut pts = Vec::new();
    let around = ((2.0 * PI * r / step).ceil() as usize).max(8);
    for z in linspace(
        -height / 2.0,
        height / 2.0,
        ((height / step).ceil() as usize + 1).max(2),
    ) {
        for k in 0..around {
            let a = 2.0 * PI * k as f64 / around as f64;
            pts.push(Vec3::new(r * a.cos(), r * a.sin(), z));
        }
    }
    let rings = ((r / step).ceil() as usize).max(1);
    for sign in [-1.0, 1.0] {
        pts.push(Vec3::new(0.0, 0.0, sign * height / 2.0));
        for ring in 1..=rings {
            let rr = r * ring as f64 / rings as f64;
            let count = ((2.0 * PI * rr / step).ceil() as usize).max(6);
            for k in 0..count {
                let a = 2.0 * PI * k as f64 / count as f64;
                pts.push(Vec3::new(rr * a.cos(), rr * a.sin(), sign * height / 2.0));
            }
        }
    }
    pts
}

/// Smooth color field: each channel mixes the normalized object-frame
/// coordinates through a seed-dependent rotation, plus a low-amplitude
/// sinusoidal pattern.
fn texture(points: &[Vec3], half: Vec3, seed: u64) -> Vec<[u8; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = crate::geometry::quat_to_rotmat(&Quaternion::random_uniform(&mut rng)).expect("unit quaternion");
    let freq: [f64; 3] = std::array::from_fn(|_| rng.gen_range(1.5..3.0));
    let phase: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..2.0 * PI));
    let gain = 100.0 / 3f64.sqrt();
    points
        .iter()
        .map(|p| {
            let u = p.component_div(&half);
            let m = mix * u;
            std::array::from_fn(|c| {
                let v = 127.5 + gain * m[c] + 20.0 * (freq[c] * m[(c + 1) % 3] + phase[c]).sin();
                v.round().clamp(0.0, 255.0) as u8
            })
        })
        .collect()
}

/// Largest pairwise distance, searched among the points farthest from the
/// centroid (exact for the convex, centrally symmetric shapes built here).
fn diameter(points: &[Vec3]) -> f64 {
    const CANDIDATES: usize = 512;
    let c: Vec3 = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut by_radius: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - c).norm_squared(), i))
        .collect();
    by_radius.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let cand: Vec<Vec3> = by_radius.iter().take(CANDIDATES).map(|&(_, i)| points[i]).collect();
    crate::geometry::max_pairwise_distance(&PointCloud::new(cand))
}

/// A textured parametric object centered at its own origin.
pub fn make_object(id: u8, name: &str, shape: Shape, texture_seed: u64) -> Result<ObjectModel> {
    shape.validate()?;
    let points = match shape {
        Shape::Cube { side } => box_surface(Vec3::repeat(side / 2.0), SURFACE_POINTS),
        Shape::Box { x, y, z } => box_surface(Vec3::new(x, y, z) / 2.0, SURFACE_POINTS),
        Shape::Sphere { radius } => sphere_surface(radius, SURFACE_POINTS),
        Shape::Cylinder { radius, height } => cylinder_surface(radius, height, SURFACE_POINTS),
    };
    let colors = texture(&points, shape.half_extents(), texture_seed);
    let diameter = diameter(&points);
    Ok(ObjectModel::new(
        id,
        name,
        shape.rotationally_symmetric(),
        PointCloud::new(points),
        colors,
        diameter,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub gaussian_sigma: f64,
    pub outlier_prob: f64,
    pub outlier_scale: f64,
    pub edge_band_px: usize,
    pub edge_corruption_prob: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.005,
            outlier_prob: 0.05,
            outlier_scale: 0.05,
            edge_band_px: 1,
            edge_corruption_prob: 0.05,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            gaussian_sigma: 0.0,
            outlier_prob: 0.0,
            outlier_scale: 0.0,
            edge_band_px: 0,
            edge_corruption_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.outlier_prob, self.edge_corruption_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SynthError::Spec("noise probabilities must lie in [0, 1]".into()));
        }
        if !(self.gaussian_sigma >= 0.0 && self.outlier_scale >= 0.0) {
            return Err(SynthError::Spec("noise scales must be >= 0".into()));
        }
        Ok(())
    }

    /// Both magnitude knobs multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            gaussian_sigma: self.gaussian_sigma * k,
            outlier_scale: self.outlier_scale * k,
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u8,
    pub name: String,
    pub shape: Shape,
    #[serde(default)]
    pub texture_seed: u64,
    /// Overrides the shape's own symmetry flag.
    #[serde(default)]
    pub symmetric: Option<bool>,
    pub translation_min: [f64; 3],
    pub translation_max: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    /// Plane depth on the optical axis is drawn from this range.
    pub depth: [f64; 2],
    /// Maximum plane slope along x and y.
    pub max_slope: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self {
            depth: [0.9, 1.1],
            max_slope: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub intrinsics: CameraIntrinsics,
    pub objects: Vec<ObjectSpec>,
    #[serde(default = "NoiseModel::none")]
    pub noise: NoiseModel,
    #[serde(default = "unit_light")]
    pub light_scale: [f64; 2],
    #[serde(default)]
    pub background: BackgroundSpec,
    /// Fewest pixels an object must cover for a placement to count as
    /// visible.
    #[serde(default = "default_min_visible")]
    pub min_visible_pixels: usize,
}

fn unit_light() -> [f64; 2] {
    [1.0, 1.0]
}

fn default_min_visible() -> usize {
    20
}

/// Placement attempts per frame before giving up.
pub const MAX_ATTEMPTS: usize = 100;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics
            .validate()
            .map_err(|e| SynthError::Spec(format!("intrinsics: {e}")))?;
        self.noise.validate()?;
        let mut ids = std::collections::BTreeSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            if o.id == 0 || !ids.insert(o.id) {
                return Err(SynthError::Spec(format!(
                    "objects[{i}].id: {} must be unique and non-zero",
                    o.id
                )));
            }
            o.shape.validate()?;
            if !(o.translation_min[2] > 0.0) {
                return Err(SynthError::Spec(format!(
                    "objects[{i}].translation_min: z must be positive"
                )));
            }
            if (0..3).any(|a| o.translation_min[a] > o.translation_max[a]) {
                return Err(SynthError::Spec(format!(
                    "objects[{i}]: translation_min exceeds translation_max"
                )));
            }
        }
        let [lo, hi] = self.light_scale;
        if !(lo > 0.0 && lo <= hi) {
            return Err(SynthError::Spec(
                "light_scale must be an increasing positive pair".into(),
            ));
        }
        let [d0, d1] = self.background.depth;
        if !(d0 > 0.0 && d0 <= d1) {
            return Err(SynthError::Spec(
                "background.depth must be an increasing positive pair".into(),
            ));
        }
        Ok(())
    }

    pub fn build_models(&self) -> Result<Vec<ObjectModel>> {
        self.objects
            .iter()
            .map(|o| {
                let mut m = make_object(o.id, &o.name, o.shape, o.texture_seed)?;
                if let Some(s) = o.symmetric {
                    m.symmetric = s;
                }
                Ok(m)
            })
            .collect()
    }
}

fn background_color(u: usize, v: usize, seed: u64) -> [u8; 3] {
    let h = mix_seed(&[seed, (u / 4) as u64, (v / 4) as u64]);
    let base = 70 + (h % 60) as u8;
    [base, base.saturating_add(5), base.saturating_sub(5)]
}

/// Renders one clean frame. Deterministic in `(spec.seed, index)`.
pub fn sample_scene(spec: &SceneSpec, models: &[ObjectModel], index: usize) -> Result<RgbdFrame> {
    let k = spec.intrinsics;
    'attempt: for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, index as u64, attempt as u64]));
        let z0 = rng.gen_range(spec.background.depth[0]..=spec.background.depth[1]);
        let sx = rng.gen_range(-1.0..=1.0) * spec.background.max_slope;
        let sy = rng.gen_range(-1.0..=1.0) * spec.background.max_slope;
        let bg_seed = rng.gen::<u64>();
        let light = rng.gen_range(spec.light_scale[0]..=spec.light_scale[1]);

        let mut depth = DepthMap::filled(k.width, k.height, 0.0);
        let mut mask = LabelMap::filled(k.width, k.height, 0);
        let mut color = ColorImage::filled(k.width, k.height, [0; 3]);
        for v in 0..k.height {
            for u in 0..k.width {
                let x = (u as f64 - k.cx) / k.fx;
                let y = (v as f64 - k.cy) / k.fy;
                // Plane z = z0 + sx·X + sy·Y along the ray (x, y, 1)·z.
                let z = z0 / (1.0 - sx * x - sy * y);
                depth.set(u, v, z);
                color.set(u, v, background_color(u, v, bg_seed));
            }
        }

        let mut poses = BTreeMap::new();
        for (o, model) in spec.objects.iter().zip(models) {
            let q = Quaternion::random_uniform(&mut rng);
            let t = Vec3::from_fn(|a, _| rng.gen_range(o.translation_min[a]..=o.translation_max[a]));
            let pose = Pose::from_quaternion(&q, t)?;
            for (p, c) in model.surface.points.iter().zip(&model.colors) {
                let q = pose.apply(p);
                if let Some((u, v)) = k.project_pixel(&q) {
                    if q.z < depth.get(u, v) {
                        depth.set(u, v, q.z);
                        mask.set(u, v, o.id);
                        color.set(u, v, c.map(|ch| (ch as f64 * light).round().clamp(0.0, 255.0) as u8));
                    }
                }
            }
            poses.insert(o.id, pose);
        }
        for o in &spec.objects {
            let visible = mask.data.iter().filter(|&&m| m == o.id).count();
            if visible < spec.min_visible_pixels {
                if attempt + 1 == MAX_ATTEMPTS {
                    return Err(SynthError::Placement {
                        frame: index,
                        object: o.id,
                        attempts: MAX_ATTEMPTS,
                    });
                }
                continue 'attempt;
            }
        }
        quantize_mm(&mut depth);
        return Ok(RgbdFrame {
            id: index as u32,
            color,
            depth,
            mask,
            intrinsics: k,
            gt_poses: poses,
        });
    }
    unreachable!("loop returns on its last attempt")
}

/// Rounds depth to the millimeter storage resolution.
pub fn quantize_mm(depth: &mut DepthMap) {
    for d in depth.data.iter_mut() {
        *d = (*d * 1000.0).round() / 1000.0;
    }
}

/// Pixels within `band` (Chebyshev distance) of a label change.
fn edge_band(mask: &LabelMap, band: usize) -> Vec<bool> {
    let (w, h) = (mask.width, mask.height);
    let mut boundary = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let m = mask.get(u, v);
            let differs = (u + 1 < w && mask.get(u + 1, v) != m) || (v + 1 < h && mask.get(u, v + 1) != m);
            if differs {
                boundary[v * w + u] = true;
                if u + 1 < w && mask.get(u + 1, v) != m {
                    boundary[v * w + u + 1] = true;
                }
                if v + 1 < h && mask.get(u, v + 1) != m {
                    boundary[(v + 1) * w + u] = true;
                }
            }
        }
    }
    if band <= 1 {
        return if band == 0 { vec![false; w * h] } else { boundary };
    }
    let r = band - 1;
    let mut out = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            if !boundary[v * w + u] {
                continue;
            }
            for vv in v.saturating_sub(r)..=(v + r).min(h - 1) {
                for uu in u.saturating_sub(r)..=(u + r).min(w - 1) {
                    out[vv * w + uu] = true;
                }
            }
        }
    }
    out
}

/// Adds sensor noise to every valid depth pixel. The random stream is a
/// function of `(noise.seed, frame.id)` only, so scaling the magnitudes
/// reuses the same draws.
pub fn inject_depth_noise(frame: &RgbdFrame, noise: &NoiseModel) -> RgbdFrame {
    let mut out = frame.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[noise.seed, frame.id as u64, 0x6e6f]));
    let band = edge_band(&frame.mask, noise.edge_band_px);
    let bg: Vec<f64> = frame
        .depth
        .data
        .iter()
        .zip(&frame.mask.data)
        .filter(|(d, m)| **m == 0 && **d > 0.0)
        .map(|(d, _)| *d)
        .collect();
    let bg_range = if bg.is_empty() {
        None
    } else {
        Some((
            bg.iter().cloned().fold(f64::INFINITY, f64::min),
            bg.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ))
    };
    let unit_exp = Exp::new(1.0).expect("positive rate");
    for (i, d) in out.depth.data.iter_mut().enumerate() {
        if *d <= 0.0 {
            continue;
        }
        // Every draw happens unconditionally to keep the stream aligned.
        let gauss: f64 = StandardNormal.sample(&mut rng);
        let outlier_hit = rng.gen::<f64>() < noise.outlier_prob;
        let magnitude = unit_exp.sample(&mut rng);
        let sign = if rng.gen::<f64>() < 0.75 { 1.0 } else { -1.0 };
        let edge_hit = rng.gen::<f64>() < noise.edge_corruption_prob;
        let edge_u = rng.gen::<f64>();

        let mut z = *d + gauss * noise.gaussian_sigma;
        if outlier_hit {
            z += sign * magnitude * noise.outlier_scale;
        }
        if band[i] && edge_hit {
            if let Some((lo, hi)) = bg_range {
                z = lo + (hi - lo) * edge_u;
            }
        }
        *d = z.max(0.0);
    }
    quantize_mm(&mut out.depth);
    out
}

/// Mean per-object depth-ADD of `frames` against reference renders.
pub fn measure_depth_add(frames: &[RgbdFrame], models: &[ObjectModel]) -> Option<f64> {
    let mut vals = Vec::new();
    for f in frames {
        for m in models {
            let Some(pose) = f.gt_poses.get(&m.id) else { continue };
            let reference = render_reference_depth(m, pose, &f.intrinsics, &f.mask, m.id);
            if let Ok(DepthAdd::Value(v)) = depth_add_frame(&f.depth, &reference, &f.mask, m.id) {
                vals.push(v);
            }
        }
    }
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Iterations allowed to [`calibrate_noise`].
pub const CALIBRATION_ITERATIONS: usize = 40;
pub const CALIBRATION_TOLERANCE: f64 = 0.05;

/// Scales `(gaussian_sigma, outlier_scale)` of `base` jointly until the
/// mean depth-ADD over `probe` frames is within 5% of `target`. Returns the
/// calibrated model and the measured value.
pub fn calibrate_noise(
    target: f64,
    base: &NoiseModel,
    probe: &[RgbdFrame],
    models: &[ObjectModel],
) -> Result<(NoiseModel, f64)> {
    if !(target > 0.0) {
        return Err(SynthError::Spec("calibration target must be positive".into()));
    }
    let measure = |k: f64| -> Result<f64> {
        let noise = base.scaled(k);
        let noisy: Vec<RgbdFrame> = probe.par_iter().map(|f| inject_depth_noise(f, &noise)).collect();
        measure_depth_add(&noisy, models).ok_or(SynthError::NoProbe)
    };
    let close = |m: f64| (m - target).abs() <= CALIBRATION_TOLERANCE * target;

    let mut iterations = 1;
    let at_one = measure(1.0)?;
    if close(at_one) {
        return Ok((*base, at_one));
    }
    let magnitude_free = base.gaussian_sigma == 0.0 && base.outlier_scale == 0.0;
    if magnitude_free {
        return Err(SynthError::Unreachable {
            target,
            achieved: at_one,
        });
    }
    // Bracket [lo, hi] with measure(lo) < target < measure(hi).
    let (mut lo, mut hi, mut m_lo, mut m_hi) = if at_one < target {
        (1.0, 2.0, at_one, f64::NAN)
    } else {
        (0.5, 1.0, f64::NAN, at_one)
    };
    let mut best = (1.0, at_one);
    let consider = |k: f64, m: f64, best: &mut (f64, f64)| {
        if (m - target).abs() < (best.1 - target).abs() {
            *best = (k, m);
        }
    };
    while iterations < CALIBRATION_ITERATIONS {
        if m_hi.is_nan() {
            let m = measure(hi)?;
            iterations += 1;
            consider(hi, m, &mut best);
            if close(m) {
                return Ok((base.scaled(hi), m));
            }
            if m > target {
                m_hi = m;
            } else {
                lo = hi;
                m_lo = m;
                hi *= 2.0;
            }
            continue;
        }
        if m_lo.is_nan() {
            let m = measure(lo)?;
            iterations += 1;
            consider(lo, m, &mut best);
            if close(m) {
                return Ok((base.scaled(lo), m));
            }
            if m < target {
                m_lo = m;
            } else {
                hi = lo;
                m_hi = m;
                lo /= 2.0;
                if lo < 1e-9 {
                    break;
                }
            }
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let m = measure(mid)?;
        iterations += 1;
        consider(mid, m, &mut best);
        if close(m) {
            return Ok((base.scaled(mid), m));
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(SynthError::Unreachable {
        target,
        achieved: best.1,
    })
}

/// Generates every frame of `spec` (clean, then with `spec.noise`).
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let models = spec.build_models()?;
    let frames = (0..spec.frames)
        .into_par_iter()
        .map(|i| sample_scene(spec, &models, i).map(|f| inject_depth_noise(&f, &spec.noise)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        intrinsics: spec.intrinsics,
        models,
        frames,
    })
}

/// 160×120 pinhole camera used by the built-in scene presets.
pub fn desk_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 220.0,
        fy: 220.0,
        cx: 80.0,
        cy: 60.0,
        width: 160,
        height: 120,
    }
}

fn preset(seed: u64, frames: usize, objects: Vec<ObjectSpec>) -> SceneSpec {
    SceneSpec {
        seed,
        frames,
        intrinsics: desk_intrinsics(),
        objects,
        noise: NoiseModel::none(),
        light_scale: [1.0, 1.0],
        background: BackgroundSpec::default(),
        min_visible_pixels: default_min_visible(),
    }
}

/// A single 0.1 m cube in front of the camera, clean depth.
pub fn cube_spec(seed: u64, frames: usize) -> SceneSpec {
    preset(
        seed,
        frames,
        vec![ObjectSpec {
            id: 1,
            name: "cube".into(),
            shape: Shape::Cube { side: 0.1 },
            texture_seed: 3,
            symmetric: None,
            translation_min: [-0.05, -0.04, 0.45],
            translation_max: [0.05, 0.04, 0.6],
        }],
    )
}

/// Cube, cylinder and box side by side with some overlap, clean depth.
pub fn multi_object_spec(seed: u64, frames: usize) -> SceneSpec {
    let object = |id: u8, name: &str, shape: Shape, x: [f64; 2]| ObjectSpec {
        id,
        name: name.into(),
        shape,
        texture_seed: 10 + id as u64,
        symmetric: None,
        translation_min: [x[0], -0.05, 0.5],
        translation_max: [x[1], 0.05, 0.65],
    };
    preset(
        seed,
        frames,
        vec![
            object(1, "cube", Shape::Cube { side: 0.1 }, [-0.16, -0.06]),
            object(
                2,
                "can",
                Shape::Cylinder {
                    radius: 0.035,
                    height: 0.12,
                },
                [-0.05, 0.05],
            ),
            object(
                3,
                "carton",
                Shape::Box {
                    x: 0.12,
                    y: 0.06,
                    z: 0.08,
                },
                [0.06, 0.16],
            ),
        ],
    )
}
