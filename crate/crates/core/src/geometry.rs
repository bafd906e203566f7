//! Rigid transforms, pinhole projection, model sampling and point-splat
//! depth rendering.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::{seq::index, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate quaternion (norm {0:e})")]
    DegenerateQuaternion(f64),
    #[error("matrix is not a proper rotation (orthogonality error {ortho:e}, det {det})")]
    InvalidRotation { ortho: f64, det: f64 },
    #[error("empty segment")]
    EmptySegment,
    #[error("cannot sample {requested} points from a set of {available}")]
    TooManySamples { requested: usize, available: usize },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
}

/// Unnormalized rotation quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Result<Self, GeometryError> {
        let n = self.norm();
        if n <= 1e-8 {
            return Err(GeometryError::DegenerateQuaternion(n));
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Uniform random rotation: a normalized draw of four standard normals.
    pub fn random_uniform<R: rand::Rng>(rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        loop {
            let q = Self::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            );
            if let Ok(q) = q.normalized() {
                return q;
            }
        }
    }
}

/// Rotation matrix of `q` after normalization.
pub fn quat_to_rotmat(q: &Quaternion) -> Result<Mat3, GeometryError> {
    let Quaternion { w, x, y, z } = q.normalized()?;
    Ok(Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Rigid transform `x ↦ R·x + t` (meters).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(GeometryError::InvalidRotation { ortho, det });
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    pub fn from_quaternion(q: &Quaternion, t: Vec3) -> Result<Self, GeometryError> {
        Ok(Self {
            rotation: quat_to_rotmat(q)?,
            translation: t,
        })
    }

    /// Rotation by `angle` radians about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: Vec3, angle: f64, t: Vec3) -> Self {
        let a = axis.normalize() * (angle / 2.0).sin();
        let q = Quaternion::new((angle / 2.0).cos(), a.x, a.y, a.z);
        Self::from_quaternion(&q, t).expect("unit quaternion")
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Homogeneous 4×4 matrix, row-major.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    pub fn from_row_major(m: &[f64]) -> Result<Self, GeometryError> {
        if m.len() != 16 {
            return Err(GeometryError::InvalidRotation {
                ortho: f64::INFINITY,
                det: 0.0,
            });
        }
        let r = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(r, Vec3::new(m[3], m[7], m[11]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image extent must be positive");
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return bad("principal point outside the image");
        }
        Ok(())
    }

    /// Sub-pixel image coordinates of a camera-frame point (`z > 0`).
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Nearest pixel of a camera-frame point, if it lies in front of the
    /// camera and inside the image.
    pub fn project_pixel(&self, p: &Vec3) -> Option<(usize, usize)> {
        if !(p.z > 0.0) {
            return None;
        }
        let (u, v) = self.project(p);
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some((u as usize, v as usize))
    }

    pub fn backproject_pixel(&self, u: usize, v: usize, z: f64) -> Vec3 {
        Vec3::new(
            (u as f64 - self.cx) * z / self.fx,
            (v as f64 - self.cy) * z / self.fy,
            z,
        )
    }
}

/// Row-major single-channel or packed image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T: Copy> Image<T> {
    pub fn get(&self, u: usize, v: usize) -> T {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: T) {
        self.data[v * self.width + u] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub type ColorImage = Image<[u8; 3]>;
/// Depth in meters; 0 marks an invalid pixel.
pub type DepthMap = Image<f64>;
/// Per-pixel object id; 0 is background.
pub type LabelMap = Image<u8>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let s: Vec3 = self.points.iter().sum();
        s / self.points.len().max(1) as f64
    }

    /// `[n, 3]` tensor of the coordinates.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        Tensor::matrix(self.points.len(), 3, data).expect("non-empty cloud")
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let points = t.data().chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        Self { points }
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// A rigid object known by its dense surface samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectModel {
    pub id: u8,
    pub name: String,
    pub symmetric: bool,
    pub surface: PointCloud,
    pub colors: Vec<[u8; 3]>,
    /// The evaluation / loss subset `M`.
    pub sampled: PointCloud,
    pub diameter: f64,
}

/// Default size of the evaluation subset `M`.
pub const DEFAULT_MODEL_SAMPLES: usize = 500;

impl ObjectModel {
    /// Builds a model and draws its evaluation subset with `seed`.
    pub fn new(
        id: u8,
        name: impl Into<String>,
        symmetric: bool,
        surface: PointCloud,
        colors: Vec<[u8; 3]>,
        diameter: f64,
    ) -> Self {
        let m = DEFAULT_MODEL_SAMPLES.min(surface.len());
        let sampled = sample_points(&surface, m, id as u64).expect("m within surface size");
        Self {
            id,
            name: name.into(),
            symmetric,
            surface,
            colors,
            sampled,
            diameter,
        }
    }
}

/// Largest pairwise distance in a point set.
pub fn max_pairwise_distance(cloud: &PointCloud) -> f64 {
    let pts = &cloud.points;
    let mut best = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            best = best.max((pts[i] - pts[j]).norm_squared());
        }
    }
    best.sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    pub id: u32,
    pub color: ColorImage,
    pub depth: DepthMap,
    pub mask: LabelMap,
    pub intrinsics: CameraIntrinsics,
    pub gt_poses: BTreeMap<u8, Pose>,
}

/// Object models, camera and frames of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub intrinsics: CameraIntrinsics,
    pub models: Vec<ObjectModel>,
    pub frames: Vec<RgbdFrame>,
}

impl Scene {
    pub fn model(&self, id: u8) -> Option<&ObjectModel> {
        self.models.iter().find(|m| m.id == id)
    }
}

pub fn transform_points(pose: &Pose, cloud: &PointCloud) -> PointCloud {
    PointCloud::new(cloud.points.iter().map(|p| pose.apply(p)).collect())
}

/// Row-major indices of pixels labelled `object_id` with positive depth.
pub fn valid_segment_pixels(depth: &DepthMap, mask: &LabelMap, object_id: u8) -> Vec<usize> {
    mask.data
        .iter()
        .zip(&depth.data)
        .enumerate()
        .filter(|(_, (&m, &z))| m == object_id && z > 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Back-projects every valid pixel of one object's segment, in row-major
/// scan order.
pub fn backproject(
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
    mask: &LabelMap,
    object_id: u8,
) -> Result<PointCloud, GeometryError> {
    if depth.width != mask.width || depth.height != mask.height {
        return Err(GeometryError::SizeMismatch(
            depth.width,
            depth.height,
            mask.width,
            mask.height,
        ));
    }
    let pixels = valid_segment_pixels(depth, mask, object_id);
    if pixels.is_empty() {
        return Err(GeometryError::EmptySegment);
    }
    Ok(backproject_pixels(depth, intrinsics, &pixels))
}

pub fn backproject_pixels(depth: &DepthMap, intrinsics: &CameraIntrinsics, pixels: &[usize]) -> PointCloud {
    PointCloud::new(
        pixels
            .iter()
            .map(|&i| {
                let (u, v) = (i % depth.width, i / depth.width);
                intrinsics.backproject_pixel(u, v, depth.data[i])
            })
            .collect(),
    )
}

/// Nearest-neighbour resampling; never invents depth values.
pub fn resize_depth_nearest(depth: &DepthMap, width: usize, height: usize) -> DepthMap {
    let mut out = DepthMap::filled(width, height, 0.0);
    for v in 0..height {
        let sv = v * depth.height / height;
        for u in 0..width {
            let su = u * depth.width / width;
            out.set(u, v, depth.get(su, sv));
        }
    }
    out
}

/// Uniform sample of `m` distinct points, deterministic in `seed`.
pub fn sample_points(cloud: &PointCloud, m: usize, seed: u64) -> Result<PointCloud, GeometryError> {
    if m > cloud.len() {
        return Err(GeometryError::TooManySamples {
            requested: m,
            available: cloud.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, cloud.len(), m);
    Ok(PointCloud::new(picks.iter().map(|i| cloud.points[i]).collect()))
}

pub fn sample_model_points(model: &ObjectModel, m: usize, seed: u64) -> Result<PointCloud, GeometryError> {
    sample_points(&model.surface, m, seed)
}

/// Point-splat z-buffer render of one object under `pose`, keeping only
/// pixels labelled `object_id` in `mask`.
pub fn render_reference_depth(
    model: &ObjectModel,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    mask: &LabelMap,
    object_id: u8,
) -> DepthMap {
    let mut depth = DepthMap::filled(intrinsics.width, intrinsics.height, 0.0);
    for p in &model.surface.points {
        let q = pose.apply(p);
        if let Some((u, v)) = intrinsics.project_pixel(&q) {
            let cur = depth.get(u, v);
            if cur == 0.0 || q.z < cur {
                depth.set(u, v, q.z);
            }
        }
    }
    for (d, &m) in depth.data.iter_mut().zip(&mask.data) {
        if m != object_id {
            *d = 0.0;
        }
    }
    depth
}
