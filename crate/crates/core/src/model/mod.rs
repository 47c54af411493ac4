//! The two-stage prediction model: a coarse keypoints-estimation stage with
//! optional bilinear dimension-wise fusion, and a fine spectrum-interpolation
//! stage, both parameterized by the chosen trajectory transform.

pub mod diff_transform;
pub mod forward;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::CrossAttentionOrder;
use crate::nn::tape::Mat;
use crate::traj::{Anchor, KeypointSchedule, PredictionTask, TaskKind, Trajectory};
use crate::transforms::TransformKind;

pub use forward::{co2bb_predict, evnet_forward, evnet_forward_traced, ForwardTrace};
pub use params::{BoundModel, ModelParams, StageOneParams, StageTwoParams, TransformerParams};

/// How the fine stage turns a keypoint spectrum into a full spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpolationMode {
    /// The interpolation transformer predicts the full spectrum.
    Network,
    /// Plain piecewise-linear resampling; no stage-2 network at all.
    Linear,
}

/// Pre-processing applied around the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    pub anchor: Anchor,
    pub scale: f64,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self { anchor: Anchor::Last, scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub transform: TransformKind,
    pub task: PredictionTask,
    pub keypoints: KeypointSchedule,
    /// Model width; always twice `embed_width`.
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    /// Per-branch embedding width before trajectory/noise concatenation.
    pub embed_width: usize,
    /// Hidden width of the encoder/decoder MLPs.
    pub ff_width: usize,
    pub noise_dim: usize,
    pub ctx_width: usize,
    pub use_bilinear: bool,
    pub interpolation: InterpolationMode,
    pub cross_attention_order: CrossAttentionOrder,
    pub normalize: NormalizeOptions,
}

impl ModelConfig {
    /// Full-scale defaults: width 128, 8 heads, 4 encoder-decoder layers.
    pub fn new(transform: TransformKind, task: PredictionTask) -> Result<Self> {
        let keypoints = KeypointSchedule::uniform(
            task.t_h,
            task.t_f,
            default_n_key(transform, task.t_f),
        )?;
        let cfg = Self {
            transform,
            task,
            keypoints,
            d: 128,
            heads: 8,
            layers: 4,
            embed_width: 64,
            ff_width: 512,
            noise_dim: 128,
            ctx_width: 64,
            use_bilinear: true,
            interpolation: InterpolationMode::Network,
            cross_attention_order: CrossAttentionOrder::AsPrinted,
            normalize: NormalizeOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Desk-scale variant (width 32) for tests and smoke training runs.
    pub fn small(transform: TransformKind, task: PredictionTask) -> Result<Self> {
        let mut cfg = Self::new(transform, task)?;
        cfg.d = 32;
        cfg.heads = 2;
        cfg.layers = 1;
        cfg.embed_width = 16;
        cfg.ff_width = 64;
        cfg.noise_dim = 16;
        cfg.ctx_width = 16;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d != 2 * self.embed_width {
            return Err(Error::Config(format!(
                "d ({}) must equal 2 * embed_width ({})",
                self.d, self.embed_width
            )));
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "d ({}) must divide into {} heads",
                self.d, self.heads
            )));
        }
        if self.layers == 0 || self.ff_width == 0 || self.noise_dim == 0 || self.ctx_width == 0 {
            return Err(Error::Config("layer and width settings must be positive".into()));
        }
        if self.use_bilinear && self.embed_width % 2 != 0 {
            return Err(Error::Config(
                "bilinear fusion pools 2x2, so embed_width must be even".into(),
            ));
        }
        if self.transform.requires_even() {
            let t_h = self.task.t_h;
            let total = self.task.total_steps();
            let n_key = self.keypoints.n_key();
            if t_h % 2 != 0 || total % 2 != 0 || n_key % 2 != 0 {
                return Err(Error::Config(format!(
                    "Haar needs even horizons and keypoint counts, got t_h={t_h}, t_h+t_f={total}, n_key={n_key}"
                )));
            }
        }
        if self.normalize.scale <= 0.0 {
            return Err(Error::Config("normalize.scale must be > 0".into()));
        }
        KeypointSchedule::new(self.keypoints.times.clone(), self.task.t_h, self.task.t_f)?;
        Ok(())
    }

    /// Spectrum dimensionality (the transform's dimension map of M).
    pub fn spectrum_dims(&self) -> Result<usize> {
        Ok(self.transform.shape_map(self.task.t_h, self.task.model_dims())?.1)
    }

    /// Shape of the observed-trajectory spectrum.
    pub fn observed_spectrum_shape(&self) -> Result<(usize, usize)> {
        self.transform.shape_map(self.task.t_h, self.task.model_dims())
    }

    /// Shape of the keypoint spectrum.
    pub fn keypoint_spectrum_shape(&self) -> Result<(usize, usize)> {
        self.transform.shape_map(self.keypoints.n_key(), self.task.model_dims())
    }

    /// Shape of the full (observation + prediction) spectrum.
    pub fn full_spectrum_shape(&self) -> Result<(usize, usize)> {
        self.transform.shape_map(self.task.total_steps(), self.task.model_dims())
    }
}

/// Default keypoint counts per transform and horizon: 3 for the DFT over a
/// 12-step horizon, 4 for Haar (which needs an even count), and 2 over the
/// short 4-step horizon.
pub fn default_n_key(transform: TransformKind, t_f: usize) -> usize {
    match (transform, t_f) {
        (_, 4) => 2,
        (TransformKind::Haar, t) if t % 4 == 0 => 4,
        (_, t) if t % 3 == 0 => 3,
        (TransformKind::Haar, t) if t % 2 == 0 => 2,
        (_, t) if t % 2 == 0 => 2,
        _ => 1,
    }
}

/// Opaque interaction/context input. The model never builds this itself; a
/// zero vector stands in when no external provider is wired up.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFeature {
    pub values: Vec<f64>,
    pub provenance: ContextProvenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextProvenance {
    Zero,
    External,
}

impl ContextFeature {
    pub fn zero(width: usize) -> Self {
        Self { values: vec![0.0; width], provenance: ContextProvenance::Zero }
    }

    pub fn external(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("context feature".into()));
        }
        Ok(Self { values, provenance: ContextProvenance::External })
    }

    pub fn as_row(&self) -> Mat {
        Mat::from_shape_vec((1, self.values.len()), self.values.clone()).expect("row vector")
    }
}

/// K stochastic predictions for one agent plus the intermediates that
/// produced them. All values live in the model's working frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub samples: Vec<Trajectory>,
    pub keypoint_spectra: Vec<Mat>,
    pub spatial_keypoints: Vec<Trajectory>,
    pub full_spectra: Vec<Mat>,
}

impl PredictionSet {
    pub fn k(&self) -> usize {
        self.samples.len()
    }

    /// Re-derive every sample from its stored full spectrum and demand
    /// bit-identical agreement.
    pub fn verify_consistency(&self, transform: TransformKind, t_h: usize) -> Result<()> {
        for (sample, full) in self.samples.iter().zip(&self.full_spectra) {
            let traj = transform.inverse_values(full)?;
            let sliced = traj.slice(ndarray::s![t_h.., ..]);
            let identical = sliced.shape() == sample.values().shape()
                && sliced.iter().zip(sample.values().iter()).all(|(a, b)| a == b);
            if !identical {
                return Err(Error::Numeric(
                    "stored samples do not match the inverse of their spectra".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Task presets matching the documented horizon settings.
pub fn task_preset(kind: TaskKind) -> PredictionTask {
    match kind {
        TaskKind::Bb3d => PredictionTask::new(kind, 4, 4, 1).expect("valid preset"),
        _ => PredictionTask::new(kind, 8, 12, 1).expect("valid preset"),
    }
}
