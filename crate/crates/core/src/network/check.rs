//! Finite-difference checks of every network block and of the full
//! training objective.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::Serialize;

use crate::geometry::{ObjectModel, RgbdFrame};
use crate::numerics::{grad_check_with, BoundParams, Graph, Tensor, Var};
use crate::seed::mix_seed;

use super::encoders::{encode_color, encode_geometry, gff, ColorCrop};
use super::fusion::{modality_fusion, pointwise_fusion};
use super::head::{pose_head_vars, rotation_rows};
use super::loss::{confidence_loss_graph, pose_loss_graph};
use super::pipeline::{batch_objective, chamfer_reference, loss_model_points, prepare_sample};
use super::{Model, ModelConfig, NetworkError, Result};

pub const GRADCHECK_STEP: f64 = 1e-6;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
const PARAM_JITTER: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockCheck {
    pub block: String,
    pub max_rel_error: f64,
    /// Parameter or input holding the worst entry.
    pub worst: String,
    pub worst_index: usize,
    /// Scalars perturbed.
    pub num_values: usize,
}

impl BlockCheck {
    pub fn passes(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckSuite {
    /// Individual blocks in forward order, then `full`.
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckSuite {
    pub fn passes(&self) -> bool {
        self.blocks.iter().all(BlockCheck::passes)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockCheck> {
        self.blocks.iter().filter(|b| !b.passes())
    }
}

/// Test hook: multiplies the analytic gradient of one parameter by 2.
#[derive(Clone, Debug, Default)]
pub struct Fault {
    pub double_gradient_of: Option<String>,
}

fn normal(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let dist = Uniform::new(lo, hi);
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("consistent shape")
}

/// Reduces block outputs to a scalar with fixed random weights so every
/// output entry contributes.
fn project(g: &mut Graph, outputs: &[Var], seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total: Option<Var> = None;
    for &o in outputs {
        let w = normal(g.shape(o), 1.0, &mut rng);
        let w = g.constant(w);
        let prod = g.mul(o, w)?;
        let s = g.sum(prod);
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    total.ok_or(NetworkError::EmptyCloud)
}

fn check_block<F>(block: &str, inputs: Vec<(String, Tensor)>, h: f64, fault: &Fault, build: F) -> Result<BlockCheck>
where
    F: Fn(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>,
{
    let names: Vec<String> = inputs.iter().map(|(n, _)| n.clone()).collect();
    let tensors: Vec<Tensor> = inputs.into_iter().map(|(_, t)| t).collect();
    let faulty = fault
        .double_gradient_of
        .as_ref()
        .and_then(|f| names.iter().position(|n| n == f));
    let report = grad_check_with(
        |g: &mut Graph, vars: &[Var]| {
            let map = names.iter().cloned().zip(vars.iter().copied()).collect();
            build(g, &map)
        },
        &tensors,
        h,
        |i, grad| {
            if Some(i) == faulty {
                grad.data_mut().iter_mut().for_each(|v| *v *= 2.0);
            }
        },
    )?;
    Ok(BlockCheck {
        block: block.to_string(),
        max_rel_error: report.max_rel_error,
        worst: names[report.worst.0].clone(),
        worst_index: report.worst.1,
        num_values: tensors.iter().map(Tensor::numel).sum(),
    })
}

fn with_prefix(model: &Model, prefix: &str) -> Vec<(String, Tensor)> {
    model
        .params
        .iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect()
}

fn bound(vars: &BTreeMap<String, Var>) -> BoundParams {
    BoundParams::from_vars(vars.clone())
}

/// Checks each block on random inputs and the full objective on one real
/// sample of `object` in `frame`. Parameters are `Model::init` with `seed`
/// plus a small random perturbation: zero-initialized biases otherwise put
/// ReLU inputs exactly on the kink whenever a whole input row is zero.
pub fn gradcheck_model(
    cfg: &ModelConfig,
    seed: u64,
    frame: &RgbdFrame,
    object: &ObjectModel,
    h: f64,
    fault: &Fault,
) -> Result<GradCheckSuite> {
    let mut model = Model::init(*cfg, seed)?;
    let e = cfg.encoder;
    let f = cfg.fusion;
    let n = e.n_points;
    let d_geo = e.d_geo;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x6763]));
    for (_, t) in model.params.iter_mut() {
        let jitter = normal(t.shape(), PARAM_JITTER, &mut rng);
        t.data_mut().iter_mut().zip(jitter.data()).for_each(|(v, j)| *v += j);
    }
    let mut blocks = Vec::new();
    let out_seed = |k: u64| mix_seed(&[seed, k]);

    // Color encoder on a small random crop.
    let (cw, ch) = (5, 4);
    let rows: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % (cw * ch)).collect();
    let crop = ColorCrop {
        width: cw,
        height: ch,
        pixels: uniform(&[cw * ch, 3], -0.5, 0.5, &mut rng),
        rows,
    };
    let mut inputs = with_prefix(&model, "color.");
    inputs.push(("input.crop".into(), crop.pixels.clone()));
    blocks.push(check_block("color_encoder", inputs, h, fault, |g, v| {
        let out = encode_color(g, &bound(v), &e, &crop, v["input.crop"])?;
        project(g, &[out], out_seed(1))
    })?);

    let mut inputs = with_prefix(&model, "geo.");
    inputs.push(("input.points".into(), normal(&[n, 3], 0.5, &mut rng)));
    blocks.push(check_block("geometry_encoder", inputs, h, fault, |g, v| {
        let enc = encode_geometry(g, &bound(v), &e, v["input.points"])?;
        project(g, &[enc.tokens, enc.decoded], out_seed(2))
    })?);

    if f.use_gff {
        let mut inputs = with_prefix(&model, "gff.");
        inputs.push(("input.tokens".into(), normal(&[n, d_geo], 1.0, &mut rng)));
        blocks.push(check_block("gff", inputs, h, fault, |g, v| {
            let out = gff(g, &bound(v), v["input.tokens"])?;
            project(g, &[out], out_seed(3))
        })?);
    }

    let mut inputs = with_prefix(&model, "modality.");
    inputs.push(("input.color".into(), normal(&[n, f.d_emb], 1.0, &mut rng)));
    inputs.push(("input.geometry".into(), normal(&[n, f.d_emb], 1.0, &mut rng)));
    blocks.push(check_block("modality_fusion", inputs, h, fault, |g, v| {
        let out = modality_fusion(g, &bound(v), &f, v["input.color"], v["input.geometry"])?;
        project(g, &[out.output], out_seed(4))
    })?);

    let mut inputs = with_prefix(&model, "pointwise.");
    inputs.push(("input.color".into(), normal(&[n, f.d_emb], 1.0, &mut rng)));
    inputs.push(("input.geometry".into(), normal(&[n, f.d_emb], 1.0, &mut rng)));
    inputs.push(("input.f1".into(), normal(&[n, 2 * f.d_f1], 1.0, &mut rng)));
    blocks.push(check_block("pointwise_fusion", inputs, h, fault, |g, v| {
        let out = pointwise_fusion(g, &bound(v), &f, v["input.color"], v["input.geometry"], v["input.f1"])?;
        project(g, &[out.output], out_seed(5))
    })?);

    let mut inputs = with_prefix(&model, "head.");
    inputs.push(("input.f1".into(), normal(&[n, 2 * f.d_f1], 1.0, &mut rng)));
    inputs.push(("input.f2".into(), normal(&[n, f.d_f2], 1.0, &mut rng)));
    inputs.push(("input.anchors".into(), normal(&[n, 3], 0.1, &mut rng)));
    let scale = cfg.geometry_scale;
    blocks.push(check_block("pose_head", inputs, h, fault, |g, v| {
        let head = pose_head_vars(g, &bound(v), v["input.f1"], v["input.f2"], v["input.anchors"], scale)?;
        project(
            g,
            &[head.quaternion, head.rotation, head.translation, head.confidence],
            out_seed(6),
        )
    })?);

    // Objective on raw head-like outputs.
    let gt = frame
        .gt_poses
        .get(&object.id)
        .copied()
        .ok_or(NetworkError::ObjectNotInFrame(object.id))?;
    let model_pts = loss_model_points(object, cfg.loss.model_points)?;
    let reference = normal(&[n + 3, 3], 0.05, &mut rng);
    let inputs = vec![
        ("input.quaternion".into(), normal(&[n, 4], 1.0, &mut rng)),
        ("input.translation".into(), normal(&[n, 3], 0.05, &mut rng)),
        ("input.confidence".into(), uniform(&[n], 0.2, 0.9, &mut rng)),
        ("input.decoded".into(), normal(&[n, 3], 0.05, &mut rng)),
    ];
    let (w, lambda, symmetric) = (cfg.loss.w_conf, cfg.loss.lambda_cd, cfg.loss.symmetric_loss);
    blocks.push(check_block("loss", inputs, h, fault, |g, v| {
        let rot = rotation_rows(g, v["input.quaternion"], n)?;
        let offset = g.constant(Tensor::vector(gt.translation().iter().copied().collect()));
        let t = g.add(v["input.translation"], offset)?;
        let rows = pose_loss_graph(g, rot, t, &model_pts, &gt, symmetric)?;
        let l_add = confidence_loss_graph(g, rows, v["input.confidence"], w)?;
        let r = g.constant(reference.clone());
        let cd = g.chamfer(v["input.decoded"], r)?;
        let cd = g.scale(cd, lambda);
        Ok(g.add(l_add, cd)?)
    })?);

    // Full objective with respect to every parameter.
    let sample = prepare_sample(cfg, frame, object.id, mix_seed(&[seed, 1]))?;
    let reference = chamfer_reference(cfg, &sample, object, &gt, mix_seed(&[seed, 2]))?;
    let batch = [(sample, object, gt, reference)];
    let inputs: Vec<(String, Tensor)> = model.params.iter().map(|(k, t)| (k.clone(), t.clone())).collect();
    blocks.push(check_block("full", inputs, h, fault, |g, v| {
        let (total, _, _) = batch_objective(g, &bound(v), cfg, &batch, w)?;
        Ok(total)
    })?);

    Ok(GradCheckSuite { blocks })
}
