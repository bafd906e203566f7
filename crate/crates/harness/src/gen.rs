use std::fmt::Write as _;
use std::path::Path;

use dttd_core::dataio::write_scene;
use dttd_core::geometry::Scene;
use dttd_core::synthdata::{calibrate_noise, generate_scene, measure_depth_add, NoiseModel, SceneSpec};

use crate::config::GenSpec;
use crate::error::Result;

/// Frames used to measure depth-ADD while calibrating.
pub const PROBE_FRAMES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct GenSummary {
    pub frames: usize,
    /// `(id, name, mean depth-ADD in meters)`; `None` when never visible.
    pub objects: Vec<(u8, String, Option<f64>)>,
    pub noise: NoiseModel,
}

impl GenSummary {
    pub fn render(&self) -> String {
        let mut s = format!("frames {}\nobjects {}\n", self.frames, self.objects.len());
        for (id, name, v) in &self.objects {
            match v {
                Some(v) => writeln!(s, "object {id} {name} mean depth-ADD {v:.3} m").unwrap(),
                None => writeln!(s, "object {id} {name} mean depth-ADD NA").unwrap(),
            }
        }
        s
    }
}

/// Noise model to scale when calibrating: `noise` itself unless it has no
/// magnitude, in which case the default model with the same seed.
pub fn calibration_base(noise: &NoiseModel) -> NoiseModel {
    if noise.gaussian_sigma == 0.0 && noise.outlier_scale == 0.0 {
        NoiseModel {
            seed: noise.seed,
            ..NoiseModel::default()
        }
    } else {
        *noise
    }
}

/// Calibrates `base` on the first frames of `clean` to `target` meters.
pub fn calibrate_on(target: f64, base: &NoiseModel, clean: &Scene) -> Result<NoiseModel> {
    let probe = &clean.frames[..clean.frames.len().min(PROBE_FRAMES)];
    let (noise, _) = calibrate_noise(target, &calibration_base(base), probe, &clean.models)?;
    Ok(noise)
}

/// Scene for `spec`, with noise calibrated first when a target is set.
pub fn generate(spec: &GenSpec) -> Result<(Scene, GenSummary)> {
    let noise = match spec.target_depth_add_m {
        None => spec.scene.noise,
        Some(target) => {
            let clean = generate_scene(&SceneSpec {
                noise: NoiseModel::none(),
                ..spec.scene.clone()
            })?;
            calibrate_on(target, &spec.scene.noise, &clean)?
        }
    };
    let scene = generate_scene(&SceneSpec {
        noise,
        ..spec.scene.clone()
    })?;
    let summary = summarize(&scene, noise);
    Ok((scene, summary))
}

pub fn summarize(scene: &Scene, noise: NoiseModel) -> GenSummary {
    let objects = scene
        .models
        .iter()
        .map(|m| {
            (
                m.id,
                m.name.clone(),
                measure_depth_add(&scene.frames, std::slice::from_ref(m)),
            )
        })
        .collect();
    GenSummary {
        frames: scene.frames.len(),
        objects,
        noise,
    }
}

pub fn run_gen(spec: &GenSpec, out: &Path) -> Result<GenSummary> {
    let (scene, summary) = generate(spec)?;
    write_scene(&scene, out)?;
    Ok(summary)
}
