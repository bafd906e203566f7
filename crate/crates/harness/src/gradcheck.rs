use std::fmt::Write as _;

use dttd_core::geometry::CameraIntrinsics;
use dttd_core::network::{gradcheck_model, BlockCheck, Fault, ModelConfig, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
use dttd_core::numerics::primitive_gradchecks;
use dttd_core::synthdata::{cube_spec, generate_scene, NoiseModel, SceneSpec};

use crate::error::{HarnessError, Result};

/// Largest point count the finite-difference run accepts.
pub const MAX_GRADCHECK_POINTS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Primitives, then network blocks, then `full`.
    pub checks: Vec<BlockCheck>,
}

impl GradcheckReport {
    pub fn passes(&self) -> bool {
        self.checks.iter().all(BlockCheck::passes)
    }

    pub fn failures(&self) -> Vec<&BlockCheck> {
        self.checks.iter().filter(|c| !c.passes()).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let verdict = if c.passes() { "PASS" } else { "FAIL" };
            writeln!(
                s,
                "{:<28} max_rel_error {:.3e} {verdict} (worst {}[{}], {} values)",
                c.block, c.max_rel_error, c.worst, c.worst_index, c.num_values
            )
            .unwrap();
        }
        s
    }

    /// Error naming every failing block and its worst parameter.
    pub fn failure(&self) -> Option<HarnessError> {
        let f = self.failures();
        (!f.is_empty()).then(|| {
            let list: Vec<String> = f.iter().map(|c| format!("{} ({})", c.block, c.worst)).collect();
            HarnessError::Failure(format!(
                "gradient check above {GRADCHECK_TOLERANCE:e}: {}",
                list.join(", ")
            ))
        })
    }
}

fn probe_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        intrinsics: CameraIntrinsics {
            fx: 80.0,
            fy: 80.0,
            cx: 24.0,
            cy: 18.0,
            width: 48,
            height: 36,
        },
        noise: NoiseModel {
            seed,
            ..NoiseModel::default()
        },
        ..cube_spec(seed, 1)
    }
}

pub fn run_gradcheck(cfg: &ModelConfig, seed: u64, fault: &Fault) -> Result<GradcheckReport> {
    if cfg.encoder.n_points > MAX_GRADCHECK_POINTS {
        return Err(HarnessError::Validation(format!(
            "gradcheck needs n_points <= {MAX_GRADCHECK_POINTS}, got {}",
            cfg.encoder.n_points
        )));
    }
    cfg.validate()?;
    let mut checks: Vec<BlockCheck> = primitive_gradchecks(seed, GRADCHECK_STEP)
        .map_err(|e| HarnessError::Validation(e.to_string()))?
        .into_iter()
        .map(|(name, r)| BlockCheck {
            block: format!("primitive.{name}"),
            max_rel_error: r.max_rel_error,
            worst: format!("input{}", r.worst.0),
            worst_index: r.worst.1,
            num_values: 0,
        })
        .collect();
    let scene = generate_scene(&probe_spec(seed))?;
    let suite = gradcheck_model(cfg, seed, &scene.frames[0], &scene.models[0], GRADCHECK_STEP, fault)?;
    checks.extend(suite.blocks);
    Ok(GradcheckReport { checks })
}
