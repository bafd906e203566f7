use std::path::{Path, PathBuf};

use dttd_core::dataio::write_atomic;
use dttd_core::network::{ModelConfig, Variant};
use dttd_core::synthdata::SceneSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const RUN_FILE: &str = "run.json";

/// Named model size or a full configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(Preset),
    Custom(ModelConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Toy,
    Desk,
    Paper,
}

impl ModelChoice {
    pub fn resolve(&self) -> ModelConfig {
        match self {
            ModelChoice::Preset(Preset::Toy) => ModelConfig::toy(),
            ModelChoice::Preset(Preset::Desk) => ModelConfig::desk(),
            ModelChoice::Preset(Preset::Paper) => ModelConfig::paper(),
            ModelChoice::Custom(c) => *c,
        }
    }
}

fn desk_model() -> ModelChoice {
    ModelChoice::Preset(Preset::Desk)
}

fn full_variant() -> Variant {
    Variant::Full
}

fn one() -> usize {
    1
}

fn default_peak_lr() -> f64 {
    1e-5
}

fn default_end_lr() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "desk_model")]
    pub model: ModelChoice,
    /// Overrides the GFF and Chamfer switches of `model`.
    #[serde(default = "full_variant")]
    pub variant: Variant,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default = "default_peak_lr")]
    pub peak_lr: f64,
    #[serde(default = "default_end_lr")]
    pub end_lr: f64,
    /// Defaults to one epoch.
    #[serde(default)]
    pub warmup_steps: Option<usize>,
    /// Stops training early once this many steps ran.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: desk_model(),
            variant: Variant::Full,
            batch_size: 1,
            peak_lr: default_peak_lr(),
            end_lr: default_end_lr(),
            warmup_steps: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        self.model.resolve().with_variant(self.variant)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if self.batch_size == 0 {
            return Err(HarnessError::Validation("batch_size must be positive".into()));
        }
        if !(self.peak_lr >= 0.0 && self.end_lr >= 0.0) {
            return Err(HarnessError::Validation("peak_lr and end_lr must be >= 0".into()));
        }
        Ok(())
    }
}

/// Scene spec plus an optional noise calibration target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    #[serde(flatten)]
    pub scene: SceneSpec,
    /// When set, `scene.noise` (or the default model if it is noiseless) is
    /// rescaled until the mean depth-ADD of the clean frames reaches this
    /// value in meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_depth_add_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzeKind {
    Tokens,
    Attention,
}

/// Fully resolved inputs of one command. Input files are embedded, input
/// directories are referenced by absolute path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    Gen {
        spec: GenSpec,
    },
    Train {
        scenes: Vec<PathBuf>,
        config: TrainConfig,
        epochs: usize,
        seed: u64,
    },
    Eval {
        scene: PathBuf,
        ckpt: PathBuf,
    },
    Sweep {
        spec: GenSpec,
        ckpts: Vec<(String, PathBuf)>,
        levels: Vec<f64>,
        seeds: Vec<u64>,
    },
    Gradcheck {
        model: ModelChoice,
        seed: u64,
    },
    Analyze {
        kind: AnalyzeKind,
        scene: PathBuf,
        ckpt: PathBuf,
        frame: u32,
    },
}

/// Contents of run.json.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    #[serde(flatten)]
    pub config: RunConfig,
    /// Warnings raised while running, such as skipped sweep levels.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn new(config: RunConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            warnings: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("run record serializes");
        text.push('\n');
        let path = dir.join(RUN_FILE);
        write_atomic(&path, text.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))
}

/// Absolute form of `path`, which must exist.
pub fn absolute(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path).map_err(|e| HarnessError::io(path, e))
}
