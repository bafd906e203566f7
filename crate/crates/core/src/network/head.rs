use crate::geometry::{Pose, Quaternion, Vec3};
use crate::numerics::{BoundParams, Graph, Tensor, Var};

use super::layers::{linear, linear_relu};
use super::{NetworkError, Result};

/// One point's pose hypothesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerPointPrediction {
    /// Unit quaternion `(w, x, y, z)`.
    pub quaternion: [f64; 4],
    /// Meters, camera frame.
    pub translation: Vec3,
    pub confidence: f64,
}

impl PerPointPrediction {
    pub fn pose(&self) -> Result<Pose> {
        let [w, x, y, z] = self.quaternion;
        Ok(Pose::from_quaternion(&Quaternion::new(w, x, y, z), self.translation)?)
    }
}

pub(crate) struct HeadVars {
    /// `[N, 4]`, unit rows.
    pub quaternion: Var,
    /// `[N, 9]`, row-major rotation of each point's quaternion.
    pub rotation: Var,
    /// `[N, 3]` meters.
    pub translation: Var,
    /// `[N]` in `(0, 1)`.
    pub confidence: Var,
}

const QUAT_NORM_EPS: f64 = 1e-12;

/// Per-point MLP on `[f1' | f2]` emitting a normalized quaternion, a
/// translation offset from the point's observed position `anchors` (meters)
/// in units of `1 / geometry_scale`, and a sigmoid confidence.
pub fn pose_head(
    g: &mut Graph,
    p: &BoundParams,
    f1: Var,
    f2: Var,
    anchors: Var,
    geometry_scale: f64,
) -> Result<(Var, Var, Var)> {
    let h = pose_head_vars(g, p, f1, f2, anchors, geometry_scale)?;
    Ok((h.quaternion, h.translation, h.confidence))
}

pub(crate) fn pose_head_vars(
    g: &mut Graph,
    p: &BoundParams,
    f1: Var,
    f2: Var,
    anchors: Var,
    geometry_scale: f64,
) -> Result<HeadVars> {
    let n = g.shape(f1)[0];
    if g.shape(f2)[0] != n {
        return Err(NetworkError::RowMismatch {
            what: "pose head f2",
            expected: n,
            got: g.shape(f2)[0],
        });
    }
    let x = g.concat(&[f1, f2], 1)?;
    let x = linear_relu(g, p, "head.h0", x)?;
    let x = linear_relu(g, p, "head.h1", x)?;
    let out = linear(g, p, "head.out", x)?;

    let raw_q = g.slice_cols(out, 0, 4)?;
    let sq = g.mul(raw_q, raw_q)?;
    let norm2 = g.sum_axis(sq, 1)?;
    let norm2 = g.reshape(norm2, &[n, 1])?;
    let eps = g.constant(Tensor::scalar(QUAT_NORM_EPS));
    let norm2 = g.add(norm2, eps)?;
    let norm = g.sqrt(norm2)?;
    let quaternion = g.div(raw_q, norm)?;
    let rotation = rotation_rows(g, quaternion, n)?;

    let offset = g.slice_cols(out, 4, 7)?;
    let offset = g.scale(offset, 1.0 / geometry_scale);
    let translation = g.add(anchors, offset)?;

    let logit = g.slice_cols(out, 7, 8)?;
    let logit = g.reshape(logit, &[n])?;
    let confidence = g.sigmoid(logit);
    Ok(HeadVars {
        quaternion,
        rotation,
        translation,
        confidence,
    })
}

/// Quaternion component pairs `(a, b)` whose products form the rotation:
/// xx, yy, zz, xy, xz, yz, wx, wy, wz.
const PAIRS: [(usize, usize); 9] = [(1, 1), (2, 2), (3, 3), (1, 2), (1, 3), (2, 3), (0, 1), (0, 2), (0, 3)];

/// `COEFF[k][r]`: weight of product `k` in row-major rotation entry `r`.
const COEFF: [[f64; 9]; 9] = [
    [0.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0, -2.0],
    [-2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -2.0],
    [-2.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 2.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 2.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, -2.0, 0.0, 2.0, 0.0],
    [0.0, 0.0, 2.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0],
    [0.0, -2.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
];

/// Row-major rotation matrices `[N, 9]` of unit quaternions `[N, 4]`.
pub(crate) fn rotation_rows(g: &mut Graph, q: Var, n: usize) -> Result<Var> {
    let mut ia = Vec::with_capacity(9 * n);
    let mut ib = Vec::with_capacity(9 * n);
    for i in 0..n {
        for &(a, b) in &PAIRS {
            ia.push(4 * i + a);
            ib.push(4 * i + b);
        }
    }
    let qa = g.gather(q, ia, &[n, 9])?;
    let qb = g.gather(q, ib, &[n, 9])?;
    let prod = g.mul(qa, qb)?;
    let coeff = g.constant(Tensor::new(vec![9, 9], COEFF.concat())?);
    let r = g.matmul(prod, coeff)?;
    let eye = g.constant(Tensor::vector(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
    Ok(g.add(r, eye)?)
}

pub fn predictions_from_tensor(
    quaternion: &Tensor,
    translation: &Tensor,
    confidence: &Tensor,
) -> Vec<PerPointPrediction> {
    quaternion
        .data()
        .chunks_exact(4)
        .zip(translation.data().chunks_exact(3))
        .zip(confidence.data())
        .map(|((q, t), &c)| PerPointPrediction {
            quaternion: [q[0], q[1], q[2], q[3]],
            translation: Vec3::new(t[0], t[1], t[2]),
            confidence: c,
        })
        .collect()
}

/// Index of the most confident prediction; the lowest index wins ties.
pub fn vote_index(predictions: &[PerPointPrediction]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in predictions.iter().enumerate() {
        if best.is_none_or(|b| p.confidence > predictions[b].confidence) {
            best = Some(i);
        }
    }
    best
}

pub fn vote_pose(predictions: &[PerPointPrediction]) -> Result<Pose> {
    let i = vote_index(predictions).ok_or(NetworkError::EmptyCloud)?;
    predictions[i].pose()
}
