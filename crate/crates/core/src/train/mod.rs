//! Pretraining and finetuning loops, Adam, the cosine schedule, checkpoints and metrics.

mod adam;
mod checkpoint;
mod metrics;
mod trainer;

pub use adam::{adam_step, clip_global_norm, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use metrics::{MetricsWriter, StepMetrics, METRICS_HEADER};
pub use trainer::{stream_rng, EpochSummary, FinetuneOutcome, Trainer};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoise::NoiseMode;
use crate::model::ModelConfig;
use crate::tensor::TensorError;

/// Global gradient norm above which updates are rescaled.
pub const GRAD_CLIP_NORM: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss in batch {batch} at step {step}")]
    NonFiniteLoss { batch: usize, step: u64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub epochs: usize,
    pub schedule: Schedule,
    /// Real atoms per batch.
    pub max_vertices: usize,
    pub sigma_t: f64,
    pub sigma_r: f64,
    pub mode: NoiseMode,
    /// Weight of the denoising term while finetuning.
    pub lambda: f64,
    pub seed: u64,
    /// Stops the run early; also the horizon of the schedule when smaller than the epoch total.
    pub max_steps: Option<u64>,
    /// Residues per protein training sample.
    pub segment_residues: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            min_lr: 1e-5,
            epochs: 50,
            schedule: Schedule::Cosine,
            max_vertices: 5000,
            sigma_t: 0.04,
            sigma_r: 0.1,
            mode: NoiseMode::BlockC,
            lambda: 0.1,
            seed: 0,
            max_steps: None,
            segment_residues: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("train.lr must be finite and non-negative, got {}", self.lr));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.lr) {
            return bad(format!("train.min_lr ({}) must lie in [0, lr = {}]", self.min_lr, self.lr));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("train.lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.sigma_t.is_finite() && self.sigma_t > 0.0) {
            return bad(format!("train.sigma_t must be positive, got {}", self.sigma_t));
        }
        if !(self.sigma_r.is_finite() && self.sigma_r >= 0.0) {
            return bad(format!("train.sigma_r must be non-negative, got {}", self.sigma_r));
        }
        if self.max_vertices == 0 {
            return bad("train.max_vertices must be positive".into());
        }
        Ok(())
    }
}

/// Everything that determines a run; its TOML text is what checkpoints hash.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(TrainError::Config)?;
        self.train.validate()
    }

    /// SHA-256 of the canonical TOML text.
    pub fn hash(&self) -> [u8; 32] {
        hash_text(&self.to_toml())
    }
}

pub(crate) fn hash_text(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

/// `min_lr + ½(lr − min_lr)(1 + cos(π·step/total))`; `total = 0` yields `lr`.
pub fn cosine_lr(step: u64, total_steps: u64, lr: f64, min_lr: f64) -> f64 {
    if total_steps == 0 {
        return lr;
    }
    let x = step.min(total_steps) as f64 / total_steps as f64;
    min_lr + 0.5 * (lr - min_lr) * (1.0 + (std::f64::consts::PI * x).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-5), 1e-3);
        assert!((cosine_lr(100, 100, 1e-3, 1e-5) - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-3, 1e-5) - (1e-3 + 1e-5) / 2.0).abs() < 1e-18);
    }

    #[test]
    fn config_round_trips_and_validates() {
        let cfg = RunConfig { model: ModelConfig::desk(), ..Default::default() };
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let partial = RunConfig::from_toml("[train]\nlr = 0.001\nmode = \"block-T\"\n").unwrap();
        assert_eq!(partial.train.mode, NoiseMode::BlockT);
        assert_eq!(partial.train.min_lr, 1e-5);
        assert!(RunConfig::from_toml("[train]\nlr = 1e-6\n").is_err());
        assert!(RunConfig::from_toml("[train]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[train]\nlambda = -1.0\n").is_err());
        let mut other = cfg.clone();
        other.model.h = 32;
        assert_ne!(other.hash(), cfg.hash());
    }
}
