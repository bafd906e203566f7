use std::fmt::Write as _;
use std::path::Path;

use dttd_core::dataio::{encode_metrics_csv, write_atomic, Checkpoint, MetricsRow};
use dttd_core::geometry::{render_reference_depth, valid_segment_pixels, ObjectModel, Pose, RgbdFrame, Scene};
use dttd_core::metrics::{accuracy_at, add_error, adds_error, auc, depth_add_frame, AucConfig, DepthAdd, ErrorTrace};
use dttd_core::network::{forward, Model, Variant};
use dttd_core::seed::mix_seed;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{HarnessError, Result};

pub const RECORDS_HEADER: &str = "frame,object,depth_add_m,add_m,adds_m,variant";
/// Threshold of the ADD(1cm) and ADD-S(1cm) accuracies.
pub const ACCURACY_THRESHOLD_M: f64 = 0.01;

/// Produces a pose for one object in one frame.
pub trait PosePredictor: Sync {
    /// Whether `object_id` was part of the predictor's training set.
    fn knows(&self, object_id: u8) -> bool;
    fn predict(&self, frame: &RgbdFrame, object: &ObjectModel) -> Result<Pose>;
}

pub struct ModelPredictor {
    pub model: Model,
    pub trained_objects: Vec<u8>,
}

impl ModelPredictor {
    pub fn new(ckpt: Checkpoint) -> Self {
        Self {
            model: Model {
                config: ckpt.config,
                params: ckpt.params,
            },
            trained_objects: ckpt.trained_objects,
        }
    }

    /// Tag of the variant whose switches match the model configuration.
    pub fn variant(&self) -> Variant {
        let flags = (self.model.config.fusion.use_gff, self.model.config.loss.lambda_cd > 0.0);
        Variant::ALL
            .into_iter()
            .find(|v| v.flags() == flags)
            .expect("every switch combination is a variant")
    }
}

/// Correspondence seed for one object in one frame, independent of the
/// order frames are evaluated in.
pub fn eval_seed(frame_id: u32, object_id: u8) -> u64 {
    mix_seed(&[frame_id as u64, object_id as u64])
}

impl PosePredictor for ModelPredictor {
    fn knows(&self, object_id: u8) -> bool {
        self.trained_objects.contains(&object_id)
    }

    fn predict(&self, frame: &RgbdFrame, object: &ObjectModel) -> Result<Pose> {
        Ok(forward(&self.model, frame, object.id, eval_seed(frame.id, object.id))?.pose)
    }
}

/// Returns the ground-truth pose.
pub struct OraclePredictor;

impl PosePredictor for OraclePredictor {
    fn knows(&self, _: u8) -> bool {
        true
    }

    fn predict(&self, frame: &RgbdFrame, object: &ObjectModel) -> Result<Pose> {
        frame
            .gt_poses
            .get(&object.id)
            .copied()
            .ok_or_else(|| HarnessError::Validation(format!("frame {} has no pose for object {}", frame.id, object.id)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub frame: u32,
    pub object: u8,
    pub depth_add_m: f64,
    pub add_m: f64,
    pub adds_m: f64,
    pub variant: String,
}

impl SweepRecord {
    pub fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.frame, self.object, self.depth_add_m, self.add_m, self.adds_m, self.variant
        )
    }
}

pub fn encode_records_csv(records: &[SweepRecord]) -> String {
    let mut s = format!("{RECORDS_HEADER}\n");
    for r in records {
        writeln!(s, "{}", r.csv_fields()).unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub rows: Vec<MetricsRow>,
    pub records: Vec<SweepRecord>,
    pub warnings: Vec<String>,
}

/// Depth-ADD of `object` in `frame`, when measurable.
pub fn frame_depth_add(frame: &RgbdFrame, object: &ObjectModel) -> Result<Option<f64>> {
    let Some(pose) = frame.gt_poses.get(&object.id) else {
        return Ok(None);
    };
    let reference = render_reference_depth(object, pose, &frame.intrinsics, &frame.mask, object.id);
    Ok(
        match depth_add_frame(&frame.depth, &reference, &frame.mask, object.id)? {
            DepthAdd::Value(v) => Some(v),
            DepthAdd::NoOverlap => None,
        },
    )
}

fn evaluate_frame(
    frame: &RgbdFrame,
    models: &[ObjectModel],
    predictor: &dyn PosePredictor,
    variant: &str,
) -> Result<Vec<SweepRecord>> {
    let mut out = Vec::new();
    for m in models {
        if !predictor.knows(m.id) || valid_segment_pixels(&frame.depth, &frame.mask, m.id).is_empty() {
            continue;
        }
        let Some(depth_add_m) = frame_depth_add(frame, m)? else {
            continue;
        };
        let gt = frame.gt_poses[&m.id];
        let pred = predictor.predict(frame, m)?;
        out.push(SweepRecord {
            frame: frame.id,
            object: m.id,
            depth_add_m,
            add_m: add_error(&m.sampled, &gt, &pred),
            adds_m: adds_error(&m.sampled, &gt, &pred),
            variant: variant.to_string(),
        });
    }
    Ok(out)
}

/// Per-frame records sorted by frame id and one metrics row per object.
/// Objects the predictor does not know get a row with depth-ADD only.
pub fn evaluate(scene: &Scene, predictor: &dyn PosePredictor, variant: &str) -> Result<EvalOutput> {
    let per_frame: Vec<Vec<SweepRecord>> = scene
        .frames
        .par_iter()
        .map(|f| evaluate_frame(f, &scene.models, predictor, variant))
        .collect::<Result<_>>()?;
    let mut records: Vec<SweepRecord> = per_frame.into_iter().flatten().collect();
    records.sort_by_key(|r| (r.frame, r.object));

    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let cfg = AucConfig::default();
    for m in &scene.models {
        if !predictor.knows(m.id) {
            warnings.push(format!(
                "object {} ({}) is not in the checkpoint's training set",
                m.id, m.name
            ));
            let depth: Vec<f64> = scene
                .frames
                .iter()
                .map(|f| frame_depth_add(f, m))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            rows.push(MetricsRow {
                object_id: m.id,
                object: m.name.clone(),
                depth_add_m: mean(&depth),
                add_auc: None,
                adds_auc: None,
                add_1cm: None,
                adds_1cm: None,
            });
            continue;
        }
        let mine: Vec<&SweepRecord> = records.iter().filter(|r| r.object == m.id).collect();
        if mine.is_empty() {
            warnings.push(format!("object {} ({}) is not visible in any frame", m.id, m.name));
            rows.push(MetricsRow {
                object_id: m.id,
                object: m.name.clone(),
                depth_add_m: None,
                add_auc: None,
                adds_auc: None,
                add_1cm: None,
                adds_1cm: None,
            });
            continue;
        }
        let trace = |f: fn(&SweepRecord) -> f64| {
            let mut t = ErrorTrace::new(m.id);
            for r in &mine {
                t.push(r.frame, f(r));
            }
            t
        };
        let add = trace(|r| r.add_m);
        let adds = trace(|r| r.adds_m);
        let depth: Vec<f64> = mine.iter().map(|r| r.depth_add_m).collect();
        rows.push(MetricsRow {
            object_id: m.id,
            object: m.name.clone(),
            depth_add_m: mean(&depth),
            add_auc: Some(auc(&add, &cfg)?),
            adds_auc: Some(auc(&adds, &cfg)?),
            add_1cm: Some(accuracy_at(&add, ACCURACY_THRESHOLD_M)?),
            adds_1cm: Some(accuracy_at(&adds, ACCURACY_THRESHOLD_M)?),
        });
    }
    Ok(EvalOutput {
        rows,
        records,
        warnings,
    })
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn write_eval(output: &EvalOutput, out: &Path) -> Result<()> {
    write_atomic(&out.join("metrics.csv"), encode_metrics_csv(&output.rows).as_bytes())?;
    write_atomic(&out.join("records.csv"), encode_records_csv(&output.records).as_bytes())?;
    Ok(())
}
