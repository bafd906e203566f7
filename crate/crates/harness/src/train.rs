use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dttd_core::dataio::{save_checkpoint, write_atomic, Checkpoint};
use dttd_core::geometry::{valid_segment_pixels, Scene};
use dttd_core::network::{train_step, LrSchedule, Model, StepReport, TrainSample};
use dttd_core::numerics::{AdamConfig, AdamState};
use dttd_core::seed::mix_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};

pub const LOSS_HEADER: &str = "step,lr,L_ADD,L_CD,total";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

/// `(scene, frame, model)` indices of every object with usable depth.
pub fn training_samples(scenes: &[Scene]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        for (fi, frame) in scene.frames.iter().enumerate() {
            for (mi, m) in scene.models.iter().enumerate() {
                if frame.gt_poses.contains_key(&m.id)
                    && !valid_segment_pixels(&frame.depth, &frame.mask, m.id).is_empty()
                {
                    out.push((si, fi, mi));
                }
            }
        }
    }
    out
}

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub steps: Vec<StepReport>,
    /// Mean total loss of each epoch that ran at least one step.
    pub epoch_means: Vec<f64>,
    pub checkpoint: Checkpoint,
}

/// Trains on `scenes`, which must share their object models. Writes one
/// checkpoint per epoch (`epoch_000` is the initialization), the final
/// checkpoint and the loss log into `out`.
pub fn run_train(scenes: &[Scene], config: &TrainConfig, epochs: usize, seed: u64, out: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    let Some(first) = scenes.first() else {
        return Err(HarnessError::Validation("train needs at least one scene".into()));
    };
    if let Some(i) = scenes.iter().position(|s| s.models != first.models) {
        return Err(HarnessError::Validation(format!(
            "scene {i} has different object models from scene 0"
        )));
    }
    let samples = training_samples(scenes);
    if samples.is_empty() && epochs > 0 {
        return Err(HarnessError::Validation("no frame shows any object".into()));
    }
    let mut trained_objects: Vec<u8> = samples.iter().map(|&(_, _, mi)| first.models[mi].id).collect();
    trained_objects.sort_unstable();
    trained_objects.dedup();

    let steps_per_epoch = samples.len().div_ceil(config.batch_size);
    let mut total_steps = epochs * steps_per_epoch;
    if let Some(m) = config.max_steps {
        total_steps = total_steps.min(m);
    }
    let schedule = LrSchedule {
        peak_lr: config.peak_lr,
        end_lr: config.end_lr,
        warmup_steps: config.warmup_steps.unwrap_or(steps_per_epoch).min(total_steps),
        total_steps,
    };

    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| HarnessError::io(&ckpt_dir, e))?;
    let mut model = Model::init(config.model_config(), seed)?;
    let snapshot = |model: &Model| Checkpoint {
        config: model.config,
        params: model.params.clone(),
        trained_objects: trained_objects.clone(),
    };
    save_checkpoint(&snapshot(&model), &ckpt_dir.join(epoch_checkpoint_name(0)))?;

    let mut adam = AdamState::new(&model.params, AdamConfig::default());
    let mut log = format!("{LOSS_HEADER}\n");
    let mut steps = Vec::with_capacity(total_steps);
    let mut epoch_means = Vec::new();
    let mut order = samples.clone();
    for epoch in 1..=epochs {
        if steps.len() >= total_steps {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, epoch as u64]));
        order.clone_from(&samples);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainSample> = chunk
                .iter()
                .map(|&(si, fi, mi)| TrainSample {
                    frame: &scenes[si].frames[fi],
                    object: &scenes[si].models[mi],
                })
                .collect();
            let r = train_step(&mut model, &mut adam, &batch, steps.len(), &schedule, seed)?;
            writeln!(log, "{},{},{},{},{}", r.step, r.lr, r.l_add, r.l_cd, r.total).unwrap();
            sum += r.total;
            count += 1;
            steps.push(r);
            if steps.len() >= total_steps {
                break;
            }
        }
        epoch_means.push(sum / count as f64);
        save_checkpoint(&snapshot(&model), &ckpt_dir.join(epoch_checkpoint_name(epoch)))?;
    }
    write_atomic(&out.join("loss.csv"), log.as_bytes())?;
    let checkpoint = snapshot(&model);
    save_checkpoint(&checkpoint, &out.join(FINAL_CHECKPOINT))?;
    Ok(TrainOutcome {
        steps,
        epoch_means,
        checkpoint,
    })
}

pub fn checkpoint_paths(out: &Path, epochs: usize) -> Vec<PathBuf> {
    (0..=epochs)
        .map(|e| out.join("checkpoints").join(epoch_checkpoint_name(e)))
        .collect()
}
