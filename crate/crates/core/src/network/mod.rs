//! The pose network: color and geometry encoders, frequency-domain geometric
//! filtering, two-stage attention fusion, the per-point pose head with
//! confidence voting, and the training objective.

mod check;
mod encoders;
mod fusion;
mod head;
mod init;
mod layers;
mod loss;
mod pipeline;
mod schedule;

use serde::{Deserialize, Serialize};

use crate::geometry::GeometryError;
use crate::numerics::{NumericsError, ParamSet};

pub use check::{gradcheck_model, BlockCheck, Fault, GradCheckSuite, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use encoders::{
    color_crop, encode_color, encode_geometry, gff, select_correspondences, ColorCrop, Correspondences,
    GeometryEncoding,
};
pub use fusion::{modality_fusion, pointwise_fusion, FusionOutput};
pub use head::{pose_head, predictions_from_tensor, vote_index, vote_pose, PerPointPrediction};
pub use loss::{
    chamfer_loss, confidence_weighted_loss, model_point_operator, pose_loss_per_point, pose_loss_rows, total_loss,
};
pub use pipeline::{
    forward, prepare_sample, train_step, ForwardOutput, Intermediates, PreparedSample, StepReport, TrainSample,
};
pub use schedule::{lr_at, LrSchedule};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetworkError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("pixel ({u}, {v}) lies outside the {width}x{height} crop")]
    PixelOutOfCrop {
        u: usize,
        v: usize,
        width: usize,
        height: usize,
    },
    #[error("object {0} does not appear in the frame")]
    ObjectNotInFrame(u8),
    #[error("{what}: expected {expected} rows, got {got}")]
    RowMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite loss in batch {batch_id}: {detail}")]
    NonFiniteLoss { batch_id: usize, detail: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-positive confidence {0}")]
    NonPositiveConfidence(f64),
    #[error("empty point cloud")]
    EmptyCloud,
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Points (and pixels) per object.
    pub n_points: usize,
    pub d_rgb: usize,
    /// Deep per-point latent width.
    pub d1: usize,
    /// Early per-point width.
    pub d2: usize,
    /// Global feature width.
    pub d3: usize,
    pub d_geo: usize,
    /// Channels of each layer of the color conv stack.
    pub color_channels: usize,
    pub decoder_hidden: usize,
}

impl EncoderConfig {
    pub fn new(n_points: usize, d_rgb: usize, d1: usize, d2: usize, d3: usize) -> Self {
        Self {
            n_points,
            d_rgb,
            d1,
            d2,
            d3,
            d_geo: d1 + d2 + d3,
            color_channels: 32,
            decoder_hidden: 64,
        }
    }

    pub fn desk() -> Self {
        Self::new(256, 32, 64, 32, 128)
    }

    pub fn paper() -> Self {
        Self {
            color_channels: 64,
            decoder_hidden: 256,
            ..Self::new(1000, 32, 256, 64, 1024)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("n_points", self.n_points),
            ("d_rgb", self.d_rgb),
            ("d1", self.d1),
            ("d2", self.d2),
            ("d3", self.d3),
            ("color_channels", self.color_channels),
            ("decoder_hidden", self.decoder_hidden),
        ];
        for (name, v) in widths {
            if v == 0 {
                return Err(NetworkError::Config(format!("encoder.{name} must be positive")));
            }
        }
        if self.d_geo != self.d1 + self.d2 + self.d3 {
            return Err(NetworkError::Config(format!(
                "encoder.d_geo = {} but d1 + d2 + d3 = {}",
                self.d_geo,
                self.d1 + self.d2 + self.d3
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d_emb: usize,
    pub modality_layers: usize,
    pub modality_heads: usize,
    pub pointwise_layers: usize,
    pub pointwise_heads: usize,
    pub d_f1: usize,
    pub d_f2: usize,
    pub use_gff: bool,
    pub head_hidden: usize,
}

impl FusionConfig {
    pub fn desk() -> Self {
        Self {
            d_emb: 32,
            modality_layers: 2,
            modality_heads: 4,
            pointwise_layers: 2,
            pointwise_heads: 4,
            d_f1: 32,
            d_f2: 64,
            use_gff: true,
            head_hidden: 128,
        }
    }

    pub fn paper() -> Self {
        Self {
            d_emb: 256,
            modality_layers: 8,
            modality_heads: 4,
            pointwise_layers: 4,
            pointwise_heads: 8,
            d_f1: 256,
            d_f2: 512,
            use_gff: true,
            head_hidden: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_emb", self.d_emb),
            ("d_f1", self.d_f1),
            ("d_f2", self.d_f2),
            ("head_hidden", self.head_hidden),
        ] {
            if v == 0 {
                return Err(NetworkError::Config(format!("fusion.{name} must be positive")));
            }
        }
        if self.modality_heads == 0 || !self.d_f1.is_multiple_of(self.modality_heads) {
            return Err(NetworkError::Config(format!(
                "fusion.modality_heads = {} does not divide d_f1 = {}",
                self.modality_heads, self.d_f1
            )));
        }
        if self.pointwise_heads == 0 || !self.d_f2.is_multiple_of(self.pointwise_heads) {
            return Err(NetworkError::Config(format!(
                "fusion.pointwise_heads = {} does not divide d_f2 = {}",
                self.pointwise_heads, self.d_f2
            )));
        }
        Ok(())
    }
}

/// Which point set guides the geometry decoder through the Chamfer term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdReference {
    /// Model samples placed by the ground-truth pose.
    CadModel,
    /// The observed back-projected points.
    LidarDepth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_cd: f64,
    pub w_conf: f64,
    /// When set, `w` moves linearly to this value over the schedule.
    pub w_conf_end: Option<f64>,
    pub cd_reference: CdReference,
    /// Use the closest-point form of the pose loss for objects flagged
    /// symmetric.
    pub symmetric_loss: bool,
    /// Model points used by the pose loss.
    pub model_points: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_cd: 0.3,
            w_conf: 0.015,
            w_conf_end: None,
            cd_reference: CdReference::CadModel,
            symmetric_loss: false,
            model_points: 500,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cd >= 0.0) {
            return Err(NetworkError::Config("loss.lambda_cd must be >= 0".into()));
        }
        if !(self.w_conf > 0.0) || self.w_conf_end.is_some_and(|w| !(w > 0.0)) {
            return Err(NetworkError::Config("loss.w_conf must be > 0".into()));
        }
        if self.model_points == 0 {
            return Err(NetworkError::Config("loss.model_points must be positive".into()));
        }
        Ok(())
    }

    /// Balancing weight at `step`.
    pub fn w_at(&self, step: usize, total_steps: usize) -> f64 {
        match self.w_conf_end {
            None => self.w_conf,
            Some(end) => {
                let p = if total_steps == 0 {
                    1.0
                } else {
                    (step as f64 / total_steps as f64).min(1.0)
                };
                self.w_conf + (end - self.w_conf) * p
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub loss: LossConfig,
    /// Multiplier applied to centered camera-frame points before the
    /// geometry encoder.
    pub geometry_scale: f64,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig::desk(),
            fusion: FusionConfig::desk(),
            loss: LossConfig::default(),
            geometry_scale: 10.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            encoder: EncoderConfig::paper(),
            fusion: FusionConfig::paper(),
            loss: LossConfig::default(),
            geometry_scale: 10.0,
        }
    }

    /// Small dimensions for finite-difference checks.
    pub fn toy() -> Self {
        Self {
            encoder: EncoderConfig {
                color_channels: 4,
                decoder_hidden: 6,
                ..EncoderConfig::new(8, 4, 4, 4, 8)
            },
            fusion: FusionConfig {
                d_emb: 8,
                modality_layers: 1,
                modality_heads: 2,
                pointwise_layers: 1,
                pointwise_heads: 2,
                d_f1: 8,
                d_f2: 8,
                use_gff: true,
                head_hidden: 8,
            },
            loss: LossConfig {
                model_points: 12,
                ..LossConfig::default()
            },
            geometry_scale: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.fusion.validate()?;
        self.loss.validate()?;
        if !(self.geometry_scale > 0.0) {
            return Err(NetworkError::Config("geometry_scale must be > 0".into()));
        }
        Ok(())
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        let (gff, cdl) = variant.flags();
        self.fusion.use_gff = gff;
        if !cdl {
            self.loss.lambda_cd = 0.0;
        }
        self
    }
}

/// Ablation variants: geometric feature filtering and the Chamfer term,
/// each on or off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoGff,
    NoCdl,
    NoGffNoCdl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoGff, Variant::NoCdl, Variant::NoGffNoCdl];

    /// `(use_gff, use_cdl)`.
    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::Full => (true, true),
            Variant::NoGff => (false, true),
            Variant::NoCdl => (true, false),
            Variant::NoGffNoCdl => (false, false),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGff => "no_gff",
            Variant::NoCdl => "no_cdl",
            Variant::NoGffNoCdl => "no_gff_no_cdl",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == tag)
    }
}

/// Configuration plus every trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: init::init_params(&config, seed),
        })
    }
}
