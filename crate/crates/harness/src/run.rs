use std::path::Path;

use dttd_core::dataio::{load_checkpoint, load_scene, write_atomic};
use dttd_core::network::{forward, Fault};

use crate::analysis::{encode_histograms_csv, export_attention_maps, pca_token_histogram, DEFAULT_BINS};
use crate::config::{AnalyzeKind, RunConfig, RunRecord};
use crate::error::{HarnessError, Result};
use crate::eval::{eval_seed, evaluate, write_eval, ModelPredictor, PosePredictor};
use crate::gen::run_gen;
use crate::gradcheck::run_gradcheck;
use crate::sweep::{run_sweep, write_sweep};
use crate::train::run_train;

/// Writes run.json, executes `config` into `out`, then rewrites run.json
/// with any warnings. Returns the text printed to stdout.
pub fn execute(config: &RunConfig, out: &Path) -> Result<String> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut record = RunRecord::new(config.clone());
    record.write(out)?;
    let (stdout, warnings) = dispatch(config, out)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if !warnings.is_empty() {
        record.warnings = warnings;
        record.write(out)?;
    }
    Ok(stdout)
}

fn dispatch(config: &RunConfig, out: &Path) -> Result<(String, Vec<String>)> {
    match config {
        RunConfig::Gen { spec } => Ok((run_gen(spec, out)?.render(), Vec::new())),
        RunConfig::Train {
            scenes,
            config,
            epochs,
            seed,
        } => {
            let scenes = scenes
                .iter()
                .map(|s| load_scene(s))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let outcome = run_train(&scenes, config, *epochs, *seed, out)?;
            let mut s = format!("steps {}\n", outcome.steps.len());
            for (e, m) in outcome.epoch_means.iter().enumerate() {
                s.push_str(&format!("epoch {} mean loss {m:.6}\n", e + 1));
            }
            Ok((s, Vec::new()))
        }
        RunConfig::Eval { scene, ckpt } => {
            let scene = load_scene(scene)?;
            let predictor = ModelPredictor::new(load_checkpoint(ckpt)?);
            let output = evaluate(&scene, &predictor, predictor.variant().tag())?;
            write_eval(&output, out)?;
            Ok((dttd_core::dataio::encode_metrics_csv(&output.rows), output.warnings))
        }
        RunConfig::Sweep {
            spec,
            ckpts,
            levels,
            seeds,
        } => {
            let variants = ckpts
                .iter()
                .map(|(tag, p)| Ok((tag.clone(), load_checkpoint(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let output = run_sweep(spec, &variants, levels, seeds)?;
            write_sweep(&output, out)?;
            let mut s = String::new();
            for sl in output.slopes.iter().filter(|s| s.seed.is_none()) {
                let v = sl.slope.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
                s.push_str(&format!("{} slope {v} over {} records\n", sl.variant, sl.count));
            }
            Ok((s, output.warnings))
        }
        RunConfig::Gradcheck { model, seed } => {
            let report = run_gradcheck(&model.resolve(), *seed, &Fault::default())?;
            let text = report.render();
            write_atomic(&out.join("gradcheck.txt"), text.as_bytes())?;
            match report.failure() {
                Some(e) => {
                    print!("{text}");
                    Err(e)
                }
                None => Ok((text, Vec::new())),
            }
        }
        RunConfig::Analyze {
            kind,
            scene,
            ckpt,
            frame,
        } => analyze(kind, scene, ckpt, *frame, out),
    }
}

fn analyze(kind: &AnalyzeKind, scene: &Path, ckpt: &Path, frame_id: u32, out: &Path) -> Result<(String, Vec<String>)> {
    let scene = load_scene(scene)?;
    let predictor = ModelPredictor::new(load_checkpoint(ckpt)?);
    let frame = scene
        .frames
        .iter()
        .find(|f| f.id == frame_id)
        .ok_or_else(|| HarnessError::Validation(format!("scene has no frame {frame_id}")))?;
    let objects: Vec<_> = scene
        .models
        .iter()
        .filter(|m| predictor.knows(m.id) && frame.mask.data.contains(&m.id))
        .collect();
    if objects.is_empty() {
        return Err(HarnessError::Validation(format!(
            "frame {frame_id} shows no object the checkpoint was trained on"
        )));
    }
    let mut s = String::new();
    for m in objects {
        let fw = forward(&predictor.model, frame, m.id, eval_seed(frame.id, m.id))?;
        let prefix = format!("object{}_", m.id);
        match kind {
            AnalyzeKind::Tokens => {
                let after = fw
                    .intermediates
                    .tokens_after_gff
                    .as_ref()
                    .ok_or_else(|| HarnessError::Validation("checkpoint has no GFF block to analyze".into()))?;
                let (b, a) = pca_token_histogram(&fw.intermediates.tokens_before_gff, after, DEFAULT_BINS)?;
                write_atomic(
                    &out.join(format!("{prefix}tokens.csv")),
                    encode_histograms_csv(&b, &a).as_bytes(),
                )?;
                s.push_str(&format!(
                    "object {} excess kurtosis before GFF {:.4} after GFF {:.4}\n",
                    m.id, b.excess_kurtosis, a.excess_kurtosis
                ));
            }
            AnalyzeKind::Attention => {
                let written = export_attention_maps(&fw.intermediates, out, &prefix)?;
                s.push_str(&format!("object {} wrote {} attention maps\n", m.id, written.len()));
            }
        }
    }
    Ok((s, Vec::new()))
}
