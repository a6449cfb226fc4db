use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::decode_eval::{CenternessMode, PostProcess, DEFAULT_THRESHOLDS};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossConfig,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global L2 gradient-norm cap.
    pub grad_clip_norm: f64,
    /// Drives initialisation and the per-epoch data order.
    pub seed: u64,
    pub window_len: usize,
    pub window_stride: usize,
    /// With anything but `learned`, the center-ness branch gets no loss.
    pub centerness: CenternessMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 6e-4,
            lr_decay: 0.9,
            lr_decay_every: 4,
            batch_size: 2,
            epochs: 24,
            loss: LossConfig::default(),
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: 10.0,
            seed: 42,
            window_len: 768,
            window_stride: 384,
            centerness: CenternessMode::Learned,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("grad_clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return Err(Error::Config("optimizer coefficients out of range".into()));
        }
        if self.window_len == 0 || self.window_stride == 0 {
            return Err(Error::Config("window length and stride must be >= 1".into()));
        }
        self.loss.validate()
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(self.lr, self.lr_decay, self.lr_decay_every, epoch)
    }

    /// Loss weights actually optimised: β is zeroed unless the branch is learned.
    pub fn effective_loss(&self) -> LossConfig {
        let mut loss = self.loss;
        if !self.centerness.trains_branch() {
            loss.beta = 0.0;
        }
        loss
    }
}

/// Step decay: `base · decay^⌊epoch / every⌋`.
pub fn lr_schedule(base: f64, decay: f64, every: usize, epoch: usize) -> f64 {
    base * decay.powi((epoch / every) as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub window_len: usize,
    pub window_stride: usize,
    pub score_threshold: f64,
    /// Suppress when IoU with a kept detection exceeds this.
    pub nms_iou: f64,
    pub top_k: usize,
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            window_len: 768,
            window_stride: 384,
            score_threshold: 0.005,
            nms_iou: 0.3,
            top_k: 300,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.window_stride == 0 {
            return Err(Error::Config("window length and stride must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Config("nms_iou must lie in [0, 1]".into()));
        }
        if self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("tIoU thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn postprocess(&self) -> PostProcess {
        PostProcess {
            score_threshold: self.score_threshold,
            nms_iou: self.nms_iou,
            top_k: self.top_k,
        }
    }
}

/// Everything one experiment needs; the shape of `--config` files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.model.n_classes != self.synth.n_classes {
            return Err(Error::Config(format!(
                "model has {} classes but the data has {}",
                self.model.n_classes, self.synth.n_classes
            )));
        }
        if self.model.in_dim != self.synth.feature_dim {
            return Err(Error::Config(format!(
                "model expects {} input channels but the data has {}",
                self.model.in_dim, self.synth.feature_dim
            )));
        }
        Ok(())
    }

    /// Reads a JSON config; omitted fields take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Overrides every seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }
}
