//! Pose error metrics (ADD, ADD-S), success-curve AUC, threshold accuracy
//! and the depth-ADD sensor noise measure.

use serde::{Deserialize, Serialize};

use crate::geometry::{DepthMap, LabelMap, PointCloud, Pose, Vec3};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("empty error trace")]
    EmptyTrace,
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("AUC grid needs at least one step")]
    NoSteps,
    #[error("depth maps differ in size: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("no frame has overlapping valid depth")]
    NoValidFrames,
    #[error("empty model point set")]
    EmptyModel,
}

/// Per-frame pose errors (meters) for one object.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorTrace {
    pub object_id: u8,
    pub frame_ids: Vec<u32>,
    pub errors: Vec<f64>,
}

impl ErrorTrace {
    pub fn new(object_id: u8) -> Self {
        Self {
            object_id,
            ..Self::default()
        }
    }

    pub fn from_errors(object_id: u8, errors: Vec<f64>) -> Self {
        Self {
            object_id,
            frame_ids: (0..errors.len() as u32).collect(),
            errors,
        }
    }

    pub fn push(&mut self, frame_id: u32, error: f64) {
        self.frame_ids.push(frame_id);
        self.errors.push(error);
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucConfig {
    pub max_threshold: f64,
    pub num_steps: usize,
}

impl Default for AucConfig {
    fn default() -> Self {
        Self {
            max_threshold: 0.10,
            num_steps: 1000,
        }
    }
}

fn distance(a: &Vec3, b: &Vec3) -> f64 {
    squared_distance(a, b).sqrt()
}

fn squared_distance(a: &Vec3, b: &Vec3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

fn transformed(model: &PointCloud, pose: &Pose) -> Vec<Vec3> {
    model.points.iter().map(|p| pose.apply(p)).collect()
}

/// Mean distance between corresponding model points under both poses.
pub fn add_error(model: &PointCloud, gt: &Pose, pred: &Pose) -> f64 {
    let a = transformed(model, gt);
    let b = transformed(model, pred);
    let sum: f64 = a.iter().zip(&b).map(|(p, q)| distance(p, q)).sum();
    sum / model.len() as f64
}

/// Mean closest-point distance from the ground-truth placement to the
/// predicted one, by exhaustive search.
pub fn adds_error_exact(model: &PointCloud, gt: &Pose, pred: &Pose) -> f64 {
    let a = transformed(model, gt);
    let b = transformed(model, pred);
    let sum: f64 = a
        .iter()
        .map(|p| b.iter().map(|q| distance(p, q)).fold(f64::INFINITY, f64::min))
        .sum();
    sum / model.len() as f64
}

/// Same value as [`adds_error_exact`], using a k-d tree for the
/// closest-point queries.
pub fn adds_error(model: &PointCloud, gt: &Pose, pred: &Pose) -> f64 {
    let a = transformed(model, gt);
    let tree = KdTree::build(transformed(model, pred));
    let sum: f64 = a.iter().map(|p| tree.nearest_squared(p).sqrt()).sum();
    sum / model.len() as f64
}

/// Static 3-d tree over a point set, queried for the nearest squared distance.
pub struct KdTree {
    points: Vec<Vec3>,
    nodes: Vec<KdNode>,
    root: Option<usize>,
}

struct KdNode {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl KdTree {
    pub fn build(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut tree = Self {
            points,
            nodes: Vec::new(),
            root: None,
        };
        tree.root = tree.build_rec(&mut order, 0);
        tree
    }

    fn build_rec(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        let pts = &self.points;
        idx.select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let point = idx[mid];
        let (lo, hi) = idx.split_at_mut(mid);
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(&mut hi[1..], depth + 1);
        self.nodes.push(KdNode {
            point,
            axis,
            left,
            right,
        });
        Some(self.nodes.len() - 1)
    }

    /// Smallest squared distance from `q` to any point; infinity if empty.
    pub fn nearest_squared(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(self.root, q, &mut best);
        best
    }

    fn search(&self, node: Option<usize>, q: &Vec3, best: &mut f64) {
        let Some(n) = node else { return };
        let node = &self.nodes[n];
        let p = &self.points[node.point];
        let d = squared_distance(q, p);
        if d < *best {
            *best = d;
        }
        let diff = q[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, q, best);
        if diff * diff <= *best {
            self.search(far, q, best);
        }
    }
}

/// Area under the success-rate curve over thresholds in
/// `(0, max_threshold]`, scaled to `[0, 100]`. Uses a uniform Riemann sum, so
/// the discretization error is at most `100 / num_steps`.
pub fn auc(trace: &ErrorTrace, cfg: &AucConfig) -> Result<f64, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    if !(cfg.max_threshold > 0.0) {
        return Err(MetricsError::InvalidThreshold(cfg.max_threshold));
    }
    if cfg.num_steps == 0 {
        return Err(MetricsError::NoSteps);
    }
    let mut sorted = trace.errors.clone();
    sorted.sort_by(f64::total_cmp);
    let mut below = 0usize;
    let mut total = 0usize;
    for k in 1..=cfg.num_steps {
        let tau = cfg.max_threshold * k as f64 / cfg.num_steps as f64;
        while below < sorted.len() && sorted[below] < tau {
            below += 1;
        }
        total += below;
    }
    Ok(100.0 * total as f64 / (cfg.num_steps * sorted.len()) as f64)
}

/// Percentage of errors strictly below `tau`.
pub fn accuracy_at(trace: &ErrorTrace, tau: f64) -> Result<f64, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    if !(tau > 0.0) {
        return Err(MetricsError::InvalidThreshold(tau));
    }
    let hits = trace.errors.iter().filter(|&&e| e < tau).count();
    Ok(100.0 * hits as f64 / trace.len() as f64)
}

/// Per-frame depth-ADD outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DepthAdd {
    Value(f64),
    /// No masked pixel has positive depth in both maps.
    NoOverlap,
}

impl DepthAdd {
    pub fn value(self) -> Option<f64> {
        match self {
            DepthAdd::Value(v) => Some(v),
            DepthAdd::NoOverlap => None,
        }
    }
}

/// Mean absolute depth difference over pixels labelled `object_id` where both
/// maps are positive.
pub fn depth_add_frame(
    sensor: &DepthMap,
    reference: &DepthMap,
    mask: &LabelMap,
    object_id: u8,
) -> Result<DepthAdd, MetricsError> {
    for (w, h) in [(reference.width, reference.height), (mask.width, mask.height)] {
        if (w, h) != (sensor.width, sensor.height) {
            return Err(MetricsError::SizeMismatch(sensor.width, sensor.height, w, h));
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&s, &r), &m) in sensor.data.iter().zip(&reference.data).zip(&mask.data) {
        if m == object_id && s > 0.0 && r > 0.0 {
            sum += (s - r).abs();
            count += 1;
        }
    }
    Ok(if count == 0 {
        DepthAdd::NoOverlap
    } else {
        DepthAdd::Value(sum / count as f64)
    })
}

/// Mean over frames, skipping frames without overlap.
pub fn depth_add_object(frames: &[DepthAdd]) -> Result<f64, MetricsError> {
    let vals: Vec<f64> = frames.iter().filter_map(|f| f.value()).collect();
    if vals.is_empty() {
        return Err(MetricsError::NoValidFrames);
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use std::f64::consts::PI;

    fn two_points() -> PointCloud {
        PointCloud::new(vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)])
    }

    #[test]
    fn worked_example() {
        let flip = Pose::from_axis_angle(Vec3::z(), PI, Vec3::zeros());
        let m = two_points();
        assert!((add_error(&m, &Pose::identity(), &flip) - 2.0).abs() < 1e-12);
        assert!((adds_error(&m, &Pose::identity(), &flip) - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            adds_error(&m, &Pose::identity(), &flip),
            adds_error_exact(&m, &Pose::identity(), &flip)
        );
    }

    #[test]
    fn shift_gives_offset_norm() {
        let m = two_points();
        let gt = Pose::from_axis_angle(Vec3::new(1.0, 1.0, 0.0), 0.3, Vec3::new(0.0, 0.0, 1.0));
        let delta = Vec3::new(0.03, -0.04, 0.0);
        let pred = Pose::from_translation(delta).compose(&gt);
        assert!((add_error(&m, &gt, &pred) - 0.05).abs() < 1e-15);
        assert_eq!(add_error(&m, &gt, &gt), 0.0);
        assert_eq!(adds_error(&m, &gt, &gt), 0.0);
    }

    #[test]
    fn auc_examples() {
        let cfg = AucConfig::default();
        let t = |e: Vec<f64>| ErrorTrace::from_errors(1, e);
        assert_eq!(auc(&t(vec![0.0; 5]), &cfg).unwrap(), 100.0);
        assert!((auc(&t(vec![0.05]), &cfg).unwrap() - 50.0).abs() <= 0.1);
        assert!((auc(&t(vec![0.02, 0.12]), &cfg).unwrap() - 40.0).abs() <= 0.1);
        assert_eq!(auc(&t(vec![]), &cfg), Err(MetricsError::EmptyTrace));
    }

    #[test]
    fn accuracy_examples() {
        let t = |e: Vec<f64>| ErrorTrace::from_errors(1, e);
        assert_eq!(accuracy_at(&t(vec![0.0; 3]), 0.01).unwrap(), 100.0);
        assert_eq!(accuracy_at(&t(vec![0.005, 0.02]), 0.01).unwrap(), 50.0);
        assert!(accuracy_at(&t(vec![]), 0.01).is_err());
    }

    #[test]
    fn kd_tree_handles_empty_and_duplicates() {
        assert_eq!(KdTree::build(vec![]).nearest_squared(&Vec3::zeros()), f64::INFINITY);
        let tree = KdTree::build(vec![Vec3::new(1.0, 1.0, 1.0); 7]);
        assert_eq!(tree.nearest_squared(&Vec3::zeros()), 3.0);
    }

    #[test]
    fn depth_add_examples() {
        let mut reference = DepthMap::filled(4, 3, 1.0);
        reference.set(0, 0, 0.0);
        let mask = LabelMap::filled(4, 3, 2);
        let v = |d: DepthAdd| d.value().unwrap();
        assert_eq!(v(depth_add_frame(&reference, &reference, &mask, 2).unwrap()), 0.0);
        let mut shifted = reference.clone();
        shifted.data.iter_mut().for_each(|d| {
            if *d > 0.0 {
                *d += 0.01
            }
        });
        let got = v(depth_add_frame(&shifted, &reference, &mask, 2).unwrap());
        assert!((got - 0.01).abs() < 1e-12);
        let mut corrupt = shifted.clone();
        corrupt.set(0, 0, 7.5);
        assert_eq!(
            depth_add_frame(&corrupt, &reference, &mask, 2).unwrap(),
            depth_add_frame(&shifted, &reference, &mask, 2).unwrap()
        );
        assert_eq!(
            depth_add_frame(&shifted, &reference, &mask, 9).unwrap(),
            DepthAdd::NoOverlap
        );
    }

    #[test]
    fn depth_add_aggregation() {
        assert_eq!(depth_add_object(&[DepthAdd::Value(0.4)]).unwrap(), 0.4);
        let mean = depth_add_object(&[DepthAdd::Value(0.1), DepthAdd::NoOverlap, DepthAdd::Value(0.3)]).unwrap();
        assert!((mean - 0.2).abs() < 1e-15);
        assert_eq!(
            depth_add_object(&[DepthAdd::NoOverlap]),
            Err(MetricsError::NoValidFrames)
        );
    }
}
