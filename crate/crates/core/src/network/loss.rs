use crate::geometry::{transform_points, PointCloud, Pose};
use crate::numerics::{Graph, Tensor, Var};

use super::head::{rotation_rows, PerPointPrediction};
use super::{NetworkError, Result};

/// Constant operators `(K, E)` such that for row-major rotations `R` (`[N, 9]`)
/// and translations `t` (`[N, 3]`), `R·K + t·E` is `[N, 3m]` holding every
/// model point under every pose, point `j` at columns `3j..3j+3`.
pub fn model_point_operator(model: &PointCloud) -> (Tensor, Tensor) {
    let m = model.len();
    let mut k = vec![0.0; 9 * 3 * m];
    let mut e = vec![0.0; 3 * 3 * m];
    for (j, x) in model.points.iter().enumerate() {
        for a in 0..3 {
            for b in 0..3 {
                k[(3 * a + b) * 3 * m + 3 * j + a] = x[b];
            }
            e[a * 3 * m + 3 * j + a] = 1.0;
        }
    }
    (
        Tensor::from_parts(vec![9, 3 * m], k),
        Tensor::from_parts(vec![3, 3 * m], e),
    )
}

/// Model points under a fixed pose, flattened to one `[3m]` row.
fn placed_row(model: &PointCloud, pose: &Pose) -> Tensor {
    Tensor::vector(
        model
            .points
            .iter()
            .flat_map(|x| {
                let p = pose.apply(x);
                [p.x, p.y, p.z]
            })
            .collect(),
    )
}

/// Per-hypothesis pose loss `[N]`: mean distance between the model under
/// the ground-truth pose and under each hypothesis, or with `symmetric` the
/// mean distance from each true point to its closest predicted point.
pub(crate) fn pose_loss_graph(
    g: &mut Graph,
    rotation: Var,
    translation: Var,
    model: &PointCloud,
    gt: &Pose,
    symmetric: bool,
) -> Result<Var> {
    let n = g.shape(rotation)[0];
    let m = model.len();
    if m == 0 {
        return Err(NetworkError::EmptyCloud);
    }
    let (k, e) = model_point_operator(model);
    let k = g.constant(k);
    let e = g.constant(e);
    let rx = g.matmul(rotation, k)?;
    let te = g.matmul(translation, e)?;
    let pred = g.add(rx, te)?;
    if symmetric {
        let target = g.constant(transform_points(gt, model).to_tensor());
        return Ok(g.nearest_mean_dist(pred, target)?);
    }
    let target = g.constant(placed_row(model, gt));
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    let sq = g.reshape(sq, &[n * m, 3])?;
    let d2 = g.sum_axis(sq, 1)?;
    let d = g.sqrt(d2)?;
    let d = g.reshape(d, &[n, m])?;
    Ok(g.mean_axis(d, 1)?)
}

/// Per-hypothesis rows of [`pose_loss_graph`] for explicit predictions.
pub fn pose_loss_rows(
    model: &PointCloud,
    gt: &Pose,
    predictions: &[PerPointPrediction],
    symmetric: bool,
) -> Result<Vec<f64>> {
    let n = predictions.len();
    let mut g = Graph::new();
    let q = g.constant(Tensor::new(
        vec![n, 4],
        predictions.iter().flat_map(|p| p.quaternion).collect(),
    )?);
    let t = g.constant(Tensor::new(
        vec![n, 3],
        predictions
            .iter()
            .flat_map(|p| [p.translation.x, p.translation.y, p.translation.z])
            .collect(),
    )?);
    let r = rotation_rows(&mut g, q, n)?;
    let l = pose_loss_graph(&mut g, r, t, model, gt, symmetric)?;
    Ok(g.value(l).data().to_vec())
}

/// Loss of one hypothesis against the ground truth.
pub fn pose_loss_per_point(
    model: &PointCloud,
    gt: &Pose,
    prediction: &PerPointPrediction,
    symmetric: bool,
) -> Result<f64> {
    Ok(pose_loss_rows(model, gt, std::slice::from_ref(prediction), symmetric)?[0])
}

/// `(1/N) Σ (c_i L_i − w log c_i)` as a graph node.
pub(crate) fn confidence_loss_graph(g: &mut Graph, losses: Var, confidence: Var, w: f64) -> Result<Var> {
    let weighted = g.mul(confidence, losses)?;
    let log_c = g.log(confidence)?;
    let reg = g.scale(log_c, w);
    let terms = g.sub(weighted, reg)?;
    Ok(g.mean(terms))
}

pub fn confidence_weighted_loss(losses: &[f64], confidence: &[f64], w: f64) -> Result<f64> {
    if let Some(&c) = confidence.iter().find(|c| !(**c > 0.0)) {
        return Err(NetworkError::NonPositiveConfidence(c));
    }
    if losses.is_empty() || losses.len() != confidence.len() {
        return Err(NetworkError::RowMismatch {
            what: "confidence",
            expected: losses.len(),
            got: confidence.len(),
        });
    }
    let sum: f64 = losses.iter().zip(confidence).map(|(l, c)| c * l - w * c.ln()).sum();
    Ok(sum / losses.len() as f64)
}

/// Bidirectional mean squared closest-point distance.
pub fn chamfer_loss(predicted: &PointCloud, reference: &PointCloud) -> Result<f64> {
    if predicted.is_empty() || reference.is_empty() {
        return Err(NetworkError::EmptyCloud);
    }
    let mut g = Graph::new();
    let a = g.constant(predicted.to_tensor());
    let b = g.constant(reference.to_tensor());
    let c = g.chamfer(a, b)?;
    Ok(g.value(c).item())
}

pub fn total_loss(l_add: f64, l_cd: f64, lambda: f64) -> f64 {
    l_add + lambda * l_cd
}
