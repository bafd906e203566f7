use crate::geometry::{sample_points, transform_points, ObjectModel, PointCloud, Pose, RgbdFrame, Vec3};
use crate::numerics::{AdamState, BoundParams, Graph, Tensor, Var};
use crate::seed::mix_seed;

use super::encoders::{color_crop, encode_color, encode_geometry, gff, select_correspondences};
use super::encoders::{ColorCrop, Correspondences};
use super::fusion::{modality_fusion, pointwise_fusion};
use super::head::PerPointPrediction;
use super::head::{pose_head_vars, predictions_from_tensor, vote_index, HeadVars};
use super::layers::linear;
use super::loss::{confidence_loss_graph, pose_loss_graph};
use super::schedule::{lr_at, LrSchedule};
use super::{CdReference, Model, ModelConfig, NetworkError, Result};

/// Network inputs for one object in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub frame_id: u32,
    pub object_id: u8,
    pub correspondences: Correspondences,
    pub centroid: Vec3,
    /// `[N, 3]` centered points times `geometry_scale`.
    pub normalized: Tensor,
    pub crop: ColorCrop,
}

pub fn prepare_sample(cfg: &ModelConfig, frame: &RgbdFrame, object_id: u8, seed: u64) -> Result<PreparedSample> {
    if !frame.mask.data.contains(&object_id) {
        return Err(NetworkError::ObjectNotInFrame(object_id));
    }
    let corr = select_correspondences(
        &frame.mask,
        &frame.depth,
        &frame.intrinsics,
        object_id,
        cfg.encoder.n_points,
        seed,
    )?;
    let centroid = corr.points.centroid();
    let s = cfg.geometry_scale;
    let normalized = Tensor::new(
        vec![corr.points.len(), 3],
        corr.points
            .points
            .iter()
            .flat_map(|p| {
                let d = (p - centroid) * s;
                [d.x, d.y, d.z]
            })
            .collect(),
    )?;
    let crop = color_crop(&frame.color, &corr.pixels);
    Ok(PreparedSample {
        frame_id: frame.id,
        object_id,
        correspondences: corr,
        centroid,
        normalized,
        crop,
    })
}

pub(crate) struct ForwardVars {
    pub head: HeadVars,
    /// `[N, 3]` meters.
    pub decoded: Var,
    pub tokens_before_gff: Var,
    pub tokens_after_gff: Option<Var>,
    pub modality_attention: Vec<Var>,
    pub pointwise_attention: Vec<Var>,
}

pub(crate) fn build_forward(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    sample: &PreparedSample,
) -> Result<ForwardVars> {
    let crop = g.constant(sample.crop.pixels.clone());
    let color = encode_color(g, p, &cfg.encoder, &sample.crop, crop)?;
    let points = g.constant(sample.normalized.clone());
    let geo = encode_geometry(g, p, &cfg.encoder, points)?;
    let tokens_after_gff = if cfg.fusion.use_gff {
        Some(gff(g, p, geo.tokens)?)
    } else {
        None
    };
    let tokens = tokens_after_gff.unwrap_or(geo.tokens);

    let c = linear(g, p, "proj.color", color)?;
    let t = linear(g, p, "proj.geo", tokens)?;
    let f1 = modality_fusion(g, p, &cfg.fusion, c, t)?;
    let f2 = pointwise_fusion(g, p, &cfg.fusion, c, t, f1.output)?;

    let anchors = g.constant(sample.correspondences.points.to_tensor());
    let head = pose_head_vars(g, p, f1.output, f2.output, anchors, cfg.geometry_scale)?;

    let decoded = g.scale(geo.decoded, 1.0 / cfg.geometry_scale);
    let centroid = g.constant(Tensor::vector(vec![
        sample.centroid.x,
        sample.centroid.y,
        sample.centroid.z,
    ]));
    let decoded = g.add(decoded, centroid)?;
    Ok(ForwardVars {
        head,
        decoded,
        tokens_before_gff: geo.tokens,
        tokens_after_gff,
        modality_attention: f1.attention,
        pointwise_attention: f2.attention,
    })
}

/// Values retained for analysis exports.
#[derive(Clone, Debug, PartialEq)]
pub struct Intermediates {
    pub tokens_before_gff: Tensor,
    pub tokens_after_gff: Option<Tensor>,
    /// Last modality-fusion layer, one `[2N, 2N]` map per head.
    pub modality_attention: Vec<Tensor>,
    /// Last point-wise layer, one `[N, N]` map per head.
    pub pointwise_attention: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub predictions: Vec<PerPointPrediction>,
    /// Index of the voted prediction.
    pub selected: usize,
    pub pose: Pose,
    /// Decoder reconstruction, meters.
    pub decoded: PointCloud,
    pub sample: PreparedSample,
    pub intermediates: Intermediates,
}

pub fn forward(model: &Model, frame: &RgbdFrame, object_id: u8, seed: u64) -> Result<ForwardOutput> {
    let sample = prepare_sample(&model.config, frame, object_id, seed)?;
    forward_prepared(model, sample)
}

pub(crate) fn forward_prepared(model: &Model, sample: PreparedSample) -> Result<ForwardOutput> {
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let v = build_forward(&mut g, &p, &model.config, &sample)?;
    let predictions = predictions_from_tensor(
        g.value(v.head.quaternion),
        g.value(v.head.translation),
        g.value(v.head.confidence),
    );
    let selected = vote_index(&predictions).ok_or(NetworkError::EmptyCloud)?;
    let pose = predictions[selected].pose()?;
    let vals = |vs: &[Var]| vs.iter().map(|&x| g.value(x).clone()).collect::<Vec<_>>();
    let intermediates = Intermediates {
        tokens_before_gff: g.value(v.tokens_before_gff).clone(),
        tokens_after_gff: v.tokens_after_gff.map(|t| g.value(t).clone()),
        modality_attention: vals(&v.modality_attention),
        pointwise_attention: vals(&v.pointwise_attention),
    };
    Ok(ForwardOutput {
        predictions,
        selected,
        pose,
        decoded: PointCloud::from_tensor(g.value(v.decoded)),
        sample,
        intermediates,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct TrainSample<'a> {
    pub frame: &'a RgbdFrame,
    pub object: &'a ObjectModel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub lr: f64,
    /// Batch mean of the confidence-weighted pose term.
    pub l_add: f64,
    /// Batch mean of the Chamfer term.
    pub l_cd: f64,
    pub total: f64,
}

/// Model points the pose loss compares.
pub(crate) fn loss_model_points(object: &ObjectModel, m: usize) -> Result<PointCloud> {
    if m <= object.sampled.len() {
        Ok(PointCloud::new(object.sampled.points[..m].to_vec()))
    } else {
        Ok(sample_points(&object.surface, m, object.id as u64)?)
    }
}

/// Chamfer reference for one sample.
pub(crate) fn chamfer_reference(
    cfg: &ModelConfig,
    sample: &PreparedSample,
    object: &ObjectModel,
    gt: &Pose,
    seed: u64,
) -> Result<PointCloud> {
    Ok(match cfg.loss.cd_reference {
        CdReference::CadModel => {
            let n = cfg.encoder.n_points.min(object.surface.len());
            transform_points(gt, &sample_points(&object.surface, n, seed)?)
        }
        CdReference::LidarDepth => sample.correspondences.points.clone(),
    })
}

/// Seeds of the sample and Chamfer reference for batch slot `i` at `step`.
pub(crate) fn sample_seeds(seed: u64, step: usize, i: usize) -> (u64, u64) {
    (
        mix_seed(&[seed, step as u64, i as u64, 0]),
        mix_seed(&[seed, step as u64, i as u64, 1]),
    )
}

/// Scalar objective for a batch, plus its two components as graph nodes.
pub(crate) fn batch_objective(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    batch: &[(PreparedSample, &ObjectModel, Pose, PointCloud)],
    w: f64,
) -> Result<(Var, Var, Var)> {
    let mut add_terms = Vec::new();
    let mut cd_terms = Vec::new();
    for (sample, object, gt, reference) in batch {
        let v = build_forward(g, p, cfg, sample)?;
        let model_pts = loss_model_points(object, cfg.loss.model_points)?;
        let symmetric = cfg.loss.symmetric_loss && object.symmetric;
        let rows = pose_loss_graph(g, v.head.rotation, v.head.translation, &model_pts, gt, symmetric)?;
        add_terms.push(confidence_loss_graph(g, rows, v.head.confidence, w)?);
        if cfg.loss.lambda_cd > 0.0 {
            let r = g.constant(reference.to_tensor());
            cd_terms.push(g.chamfer(v.decoded, r)?);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    let stack = |g: &mut Graph, terms: &[Var]| -> Result<Var> {
        if terms.is_empty() {
            return Ok(g.constant(Tensor::scalar(0.0)));
        }
        let rows: Vec<Var> = terms
            .iter()
            .map(|&t| g.reshape(t, &[1]))
            .collect::<std::result::Result<_, _>>()?;
        let all = g.concat(&rows, 0)?;
        let s = g.sum(all);
        Ok(g.scale(s, inv))
    };
    let l_add = stack(g, &add_terms)?;
    let l_cd = stack(g, &cd_terms)?;
    let weighted = g.scale(l_cd, cfg.loss.lambda_cd);
    let total = g.add(l_add, weighted)?;
    Ok((total, l_add, l_cd))
}

/// One optimizer update on `batch` at learning rate `lr_at(step)`.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut AdamState,
    batch: &[TrainSample],
    step: usize,
    schedule: &LrSchedule,
    seed: u64,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(NetworkError::EmptyBatch);
    }
    let cfg = model.config;
    let mut prepared = Vec::with_capacity(batch.len());
    for (i, s) in batch.iter().enumerate() {
        let (sample_seed, ref_seed) = sample_seeds(seed, step, i);
        let sample = prepare_sample(&cfg, s.frame, s.object.id, sample_seed)?;
        let gt = *s
            .frame
            .gt_poses
            .get(&s.object.id)
            .ok_or(NetworkError::ObjectNotInFrame(s.object.id))?;
        let reference = chamfer_reference(&cfg, &sample, s.object, &gt, ref_seed)?;
        prepared.push((sample, s.object, gt, reference));
    }

    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let w = cfg.loss.w_at(step, schedule.total_steps);
    let (total, l_add, l_cd) = batch_objective(&mut g, &p, &cfg, &prepared, w)?;
    let loss = g.value(total).item();
    if !loss.is_finite() {
        let ids: Vec<String> = batch
            .iter()
            .map(|s| format!("frame {} object {}", s.frame.id, s.object.id))
            .collect();
        return Err(NetworkError::NonFiniteLoss {
            batch_id: step,
            detail: format!(
                "loss {loss} (pose term {}, chamfer term {}) over [{}]",
                g.value(l_add).item(),
                g.value(l_cd).item(),
                ids.join(", ")
            ),
        });
    }
    let grads = g.backward(total)?;
    let grads = p.gradients(&grads);
    let lr = lr_at(step, schedule);
    optimizer.step(&mut model.params, &grads, lr)?;
    Ok(StepReport {
        step,
        lr,
        l_add: g.value(l_add).item(),
        l_cd: g.value(l_cd).item(),
        total: loss,
    })
}
