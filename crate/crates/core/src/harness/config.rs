use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossWeights, DEFAULT_TAU};
use crate::model::{ModelConfig, Variant};
use crate::synth::Manifest;

/// Architecture knobs not fixed by the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub dim: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub encoder_layers: usize,
    pub fusion_layers: usize,
    pub decoder_layers: usize,
    pub patch: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 4,
            ff_mult: 4,
            encoder_layers: 2,
            fusion_layers: 2,
            decoder_layers: 2,
            patch: 8,
            max_len: 20,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            max_grad_norm: None,
        }
    }
}

/// Learning-rate multiplier over training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Decays linearly from the base rate to zero at `steps`.
    Linear,
}

impl LrSchedule {
    /// Multiplier for the update numbered `step` (0-based) of `total`.
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Linear if total == 0 => 1.0,
            LrSchedule::Linear => 1.0 - step.min(total) as f64 / total as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Rate for the combiner and decoder.
    pub lr_decoder: f64,
    /// Rate for the video and audio encoders.
    pub lr_encoder: f64,
    pub lr_schedule: LrSchedule,
    pub tau: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub model: ModelShape,
    pub optimizer: OptimizerConfig,
    pub loss_weights: LossWeights,
    pub beam_width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Micap,
            lr_decoder: 1e-5,
            lr_encoder: 5e-5,
            lr_schedule: LrSchedule::Constant,
            tau: DEFAULT_TAU,
            batch_size: 8,
            steps: 200,
            seed: 0,
            model: ModelShape::default(),
            optimizer: OptimizerConfig::default(),
            loss_weights: LossWeights::default(),
            beam_width: 5,
            data: None,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr_decoder", self.lr_decoder),
            ("lr_encoder", self.lr_encoder),
            ("tau", self.tau),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.variant.uses_nce() && self.batch_size < 2 {
            return Err(Error::Config(
                "the contrastive loss needs batch size >= 2".into(),
            ));
        }
        if self.beam_width == 0 {
            return Err(Error::Config("beam width must be positive".into()));
        }
        Ok(())
    }

    /// Full model configuration for a dataset's frame size, `T`, `S` and
    /// vocabulary.
    pub fn model_config(&self, manifest: &Manifest) -> ModelConfig {
        let s = self.model;
        ModelConfig {
            dim: s.dim,
            heads: s.heads,
            ff_mult: s.ff_mult,
            encoder_layers: s.encoder_layers,
            fusion_layers: s.fusion_layers,
            decoder_layers: s.decoder_layers,
            frame_height: manifest.h,
            frame_width: manifest.w,
            patch: s.patch,
            max_frames: manifest.t,
            audio_len: manifest.s,
            max_len: s.max_len,
            vocab_size: manifest.vocab.len(),
            dropout: s.dropout,
        }
    }
}
