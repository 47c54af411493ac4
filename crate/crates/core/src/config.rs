//! Run configuration: one TOML document with dotted namespacing covering
//! every knob of the pipeline. Unknown keys are rejected so a stale config
//! cannot silently misconfigure an experiment.

use serde::{Deserialize, Serialize};

use crate::data::SynthKind;
use crate::error::{Error, Result};
use crate::metrics::IouSelection;
use crate::model::{default_n_key, InterpolationMode, ModelConfig, NormalizeOptions};
use crate::nn::layers::CrossAttentionOrder;
use crate::traj::{Anchor, KeypointSchedule, PredictionTask, TaskKind};
use crate::train::TrainConfig;
use crate::transforms::TransformKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskSection,
    pub transform: TransformSection,
    pub keypoints: Option<KeypointsSection>,
    pub normalize: NormalizeSection,
    pub model: ModelSection,
    pub decoder: DecoderSection,
    pub train: TrainSection,
    pub metrics: MetricsSection,
    pub data: DataSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub t_h: usize,
    pub t_f: usize,
    pub frame_interval: i64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self { kind: TaskKind::Co, t_h: 8, t_f: 12, frame_interval: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformSection {
    pub kind: TransformKind,
}

impl Default for TransformSection {
    fn default() -> Self {
        Self { kind: TransformKind::Dft }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointsSection {
    pub times: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizeSection {
    pub anchor: Anchor,
    pub scale: f64,
}

impl Default for NormalizeSection {
    fn default() -> Self {
        Self { anchor: Anchor::Last, scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub embed_width: usize,
    pub ff_width: usize,
    pub noise_dim: usize,
    pub ctx_width: usize,
    pub use_bilinear: bool,
    pub interpolation: InterpolationMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d: 128,
            heads: 8,
            layers: 4,
            embed_width: 64,
            ff_width: 512,
            noise_dim: 128,
            ctx_width: 64,
            use_bilinear: true,
            interpolation: InterpolationMode::Network,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderSection {
    pub cross_attention_order: CrossAttentionOrder,
}

impl Default for DecoderSection {
    fn default() -> Self {
        Self { cross_attention_order: CrossAttentionOrder::AsPrinted }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub k_train: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { lr: 3e-4, batch_size: 32, epochs: 100, k_train: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub k: usize,
    pub iou_selection: IouSelection,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { k: 20, iou_selection: IouSelection::AdeTied }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Annotation files; clip names are the file stems. When empty, the
    /// synthetic generator below supplies the data.
    pub files: Vec<String>,
    pub synthetic: SynthKind,
    pub synthetic_count: usize,
    /// Window stride over tracks.
    pub stride: usize,
    /// Leave-one-out test clip; mutually exclusive with `ratios`.
    pub leave_out: Option<String>,
    /// Train/val/test fractions for clip-level ratio splitting.
    pub ratios: Option<[f64; 3]>,
    pub split_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            files: Vec::new(),
            synthetic: SynthKind::Linear,
            synthetic_count: 16,
            stride: 1,
            leave_out: None,
            ratios: None,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        self.train_config().validate()?;
        if self.data.stride == 0 {
            return Err(Error::Config("data.stride must be >= 1".into()));
        }
        if self.data.leave_out.is_some() && self.data.ratios.is_some() {
            return Err(Error::Config(
                "data.leave_out and data.ratios are mutually exclusive".into(),
            ));
        }
        if self.metrics.k == 0 {
            return Err(Error::Config("metrics.k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn prediction_task(&self) -> Result<PredictionTask> {
        PredictionTask::new(self.task.kind, self.task.t_h, self.task.t_f, self.task.frame_interval)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let task = self.prediction_task()?;
        let keypoints = match &self.keypoints {
            Some(k) => KeypointSchedule::new(k.times.clone(), task.t_h, task.t_f)?,
            None => KeypointSchedule::uniform(
                task.t_h,
                task.t_f,
                default_n_key(self.transform.kind, task.t_f),
            )?,
        };
        let cfg = ModelConfig {
            transform: self.transform.kind,
            task,
            keypoints,
            d: self.model.d,
            heads: self.model.heads,
            layers: self.model.layers,
            embed_width: self.model.embed_width,
            ff_width: self.model.ff_width,
            noise_dim: self.model.noise_dim,
            ctx_width: self.model.ctx_width,
            use_bilinear: self.model.use_bilinear,
            interpolation: self.model.interpolation,
            cross_attention_order: self.decoder.cross_attention_order,
            normalize: NormalizeOptions {
                anchor: self.normalize.anchor,
                scale: self.normalize.scale,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            k_train: self.train.k_train,
            seed: self.train.seed,
        }
    }
}
