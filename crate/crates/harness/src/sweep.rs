use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use dttd_core::dataio::{write_atomic, Checkpoint};
use dttd_core::geometry::Scene;
use dttd_core::seed::mix_seed;
use dttd_core::synthdata::{generate_scene, inject_depth_noise, NoiseModel, SceneSpec};
use rayon::prelude::*;

use crate::config::GenSpec;
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate, mean, ModelPredictor, SweepRecord};
use crate::gen::calibrate_on;

/// A sweep record with the seed and noise level that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelRecord {
    pub seed: u64,
    pub level: f64,
    pub record: SweepRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bin {
    pub variant: String,
    /// `None` pools every seed.
    pub seed: Option<u64>,
    pub level: f64,
    pub count: usize,
    pub mean_depth_add_m: f64,
    pub mean_add_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Slope {
    pub variant: String,
    pub seed: Option<u64>,
    /// Least-squares slope of ADD against depth-ADD; `None` when depth-ADD
    /// has no spread.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<LevelRecord>,
    pub bins: Vec<Bin>,
    pub slopes: Vec<Slope>,
    pub warnings: Vec<String>,
}

/// Least-squares fit `y ≈ slope·x + intercept`.
pub fn least_squares(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Test frames of `spec` with seed `seed` and noise calibrated to `level`;
/// level 0 keeps the clean frames.
pub fn level_scene(clean: &Scene, spec: &GenSpec, seed: u64, index: usize, level: f64) -> Result<Scene> {
    if level == 0.0 {
        return Ok(clean.clone());
    }
    let base = NoiseModel {
        seed: mix_seed(&[seed, index as u64]),
        ..spec.scene.noise
    };
    let noise = calibrate_on(level, &base, clean)?;
    let frames = clean.frames.par_iter().map(|f| inject_depth_noise(f, &noise)).collect();
    Ok(Scene {
        frames,
        ..clean.clone()
    })
}

pub fn run_sweep(
    spec: &GenSpec,
    variants: &[(String, Checkpoint)],
    levels: &[f64],
    seeds: &[u64],
) -> Result<SweepOutput> {
    if levels.len() < 2 {
        return Err(HarnessError::Validation("sweep needs at least two noise levels".into()));
    }
    if let Some(l) = levels.iter().find(|l| !(**l >= 0.0)) {
        return Err(HarnessError::Validation(format!("noise level {l} must be >= 0")));
    }
    if variants.is_empty() {
        return Err(HarnessError::Validation("sweep needs at least one checkpoint".into()));
    }
    if seeds.is_empty() {
        return Err(HarnessError::Validation("sweep needs at least one seed".into()));
    }
    let predictors: Vec<(String, ModelPredictor)> = variants
        .iter()
        .map(|(tag, c)| (tag.clone(), ModelPredictor::new(c.clone())))
        .collect();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for &seed in seeds {
        let clean = generate_scene(&SceneSpec {
            seed,
            noise: NoiseModel::none(),
            ..spec.scene.clone()
        })?;
        for (i, &level) in levels.iter().enumerate() {
            let scene = match level_scene(&clean, spec, seed, i, level) {
                Ok(s) => s,
                Err(HarnessError::Validation(msg)) => {
                    warnings.push(format!("seed {seed} level {level}: skipped, {msg}"));
                    continue;
                }
                Err(e) => return Err(e),
            };
            for (tag, p) in &predictors {
                let out = evaluate(&scene, p, tag)?;
                warnings.extend(
                    out.warnings
                        .into_iter()
                        .map(|w| format!("seed {seed} level {level} {tag}: {w}")),
                );
                records.extend(
                    out.records
                        .into_iter()
                        .map(|record| LevelRecord { seed, level, record }),
                );
            }
        }
    }
    let (bins, slopes) = summarize(&records, variants, seeds, levels);
    Ok(SweepOutput {
        records,
        bins,
        slopes,
        warnings,
    })
}

/// Bins by noise level and fits slopes per variant, per seed and pooled.
pub fn summarize(
    records: &[LevelRecord],
    variants: &[(String, Checkpoint)],
    seeds: &[u64],
    levels: &[f64],
) -> (Vec<Bin>, Vec<Slope>) {
    let mut bins = Vec::new();
    let mut slopes = Vec::new();
    let mut tags: Vec<&str> = Vec::new();
    for (t, _) in variants {
        if !tags.contains(&t.as_str()) {
            tags.push(t);
        }
    }
    let scopes: Vec<Option<u64>> = seeds.iter().map(|&s| Some(s)).chain([None]).collect();
    for tag in tags {
        for &scope in &scopes {
            let selected: Vec<&LevelRecord> = records
                .iter()
                .filter(|r| r.record.variant == tag && scope.is_none_or(|s| r.seed == s))
                .collect();
            let mut by_level: BTreeMap<usize, Vec<&SweepRecord>> = BTreeMap::new();
            for r in &selected {
                let li = levels.iter().position(|&l| l == r.level).expect("level of record");
                by_level.entry(li).or_default().push(&r.record);
            }
            for (li, rs) in by_level {
                let depth: Vec<f64> = rs.iter().map(|r| r.depth_add_m).collect();
                let add: Vec<f64> = rs.iter().map(|r| r.add_m).collect();
                bins.push(Bin {
                    variant: tag.to_string(),
                    seed: scope,
                    level: levels[li],
                    count: rs.len(),
                    mean_depth_add_m: mean(&depth).expect("non-empty bin"),
                    mean_add_m: mean(&add).expect("non-empty bin"),
                });
            }
            let points: Vec<(f64, f64)> = selected
                .iter()
                .map(|r| (r.record.depth_add_m, r.record.add_m))
                .collect();
            let fit = least_squares(&points);
            slopes.push(Slope {
                variant: tag.to_string(),
                seed: scope,
                slope: fit.map(|f| f.0),
                intercept: fit.map(|f| f.1),
                count: points.len(),
            });
        }
    }
    (bins, slopes)
}

fn scope_field(seed: Option<u64>) -> String {
    seed.map_or_else(|| "all".to_string(), |s| s.to_string())
}

fn opt_field(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn write_sweep(output: &SweepOutput, out: &Path) -> Result<()> {
    let mut s = String::from("seed,level,frame,object,depth_add_m,add_m,adds_m,variant\n");
    for r in &output.records {
        writeln!(s, "{},{},{}", r.seed, r.level, r.record.csv_fields()).unwrap();
    }
    write_atomic(&out.join("sweep_records.csv"), s.as_bytes())?;

    let mut s = String::from("variant,seed,level,count,mean_depth_add_m,mean_add_m\n");
    for b in &output.bins {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            b.variant,
            scope_field(b.seed),
            b.level,
            b.count,
            b.mean_depth_add_m,
            b.mean_add_m
        )
        .unwrap();
    }
    write_atomic(&out.join("sweep_bins.csv"), s.as_bytes())?;

    let mut s = String::from("variant,seed,slope,intercept,count\n");
    for sl in &output.slopes {
        writeln!(
            s,
            "{},{},{},{},{}",
            sl.variant,
            scope_field(sl.seed),
            opt_field(sl.slope),
            opt_field(sl.intercept),
            sl.count
        )
        .unwrap();
    }
    write_atomic(&out.join("sweep_slopes.csv"), s.as_bytes())?;
    Ok(())
}
