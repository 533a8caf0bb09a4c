//! Spatiotemporal-aware attention network predicting per-element noise.
//!
//! One token per structured-input row. Each block applies a scale/shift
//! conditioned residual feed-forward followed by RoPE self-attention over the
//! temporal axis. The two reference rows sit at positions −2 and −1 and carry
//! a learned null audio token.

mod layout;
mod model;
mod rope;

use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionSchedule, ScheduleConfig};
use crate::error::{invalid, Result};
use crate::motion::LATENT_DIM;

pub use layout::{AttnSlots, BlockSlots, Init, Layout, ParamGroup, Slot};
pub use model::{sinusoidal_embedding, DenoiseBatch, Denoiser, ForwardCache};
pub use rope::{rope_rotate, ROPE_BASE};

/// Attention configuration; the non-default modes exist for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    Rope,
    /// Self-attention without positional information.
    NoRope,
    /// No attention sublayers at all; rows are processed independently.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub model_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub latent_dim: usize,
    pub audio_dim: usize,
    pub max_seq: usize,
    /// Feed-forward hidden width as a multiple of `model_dim`.
    pub ff_mult: usize,
    #[serde(default)]
    pub attention: AttentionMode,
    /// Noise schedule the model is trained under; it sets the skip scale.
    #[serde(default)]
    pub schedule: ScheduleConfig,
}

/// Smallest supported sequence limit: a 64-frame window plus two reference rows.
pub const MIN_MAX_SEQ: usize = 66;

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            model_dim: 256,
            n_blocks: 4,
            n_heads: 4,
            latent_dim: LATENT_DIM,
            audio_dim: 16,
            max_seq: MIN_MAX_SEQ,
            ff_mult: 2,
            attention: AttentionMode::Rope,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl DenoiserConfig {
    /// Configuration used by the gradient checks.
    pub fn tiny() -> Self {
        Self {
            model_dim: 16,
            n_blocks: 1,
            n_heads: 2,
            audio_dim: 4,
            ..Self::default()
        }
    }

    /// Desk-scale training configuration used by the toy experiments.
    pub fn toy() -> Self {
        Self {
            model_dim: 64,
            n_blocks: 2,
            n_heads: 4,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model_dim", self.model_dim),
            ("n_blocks", self.n_blocks),
            ("n_heads", self.n_heads),
            ("audio_dim", self.audio_dim),
            ("ff_mult", self.ff_mult),
        ];
        for (name, v) in positive {
            if v == 0 {
                return invalid(format!("{name} must be positive"));
            }
        }
        if !self.model_dim.is_multiple_of(2 * self.n_heads) {
            return invalid(format!(
                "model_dim {} must be divisible by 2·n_heads = {}",
                self.model_dim,
                2 * self.n_heads
            ));
        }
        if self.latent_dim != LATENT_DIM {
            return invalid(format!("latent_dim must be {LATENT_DIM}, got {}", self.latent_dim));
        }
        if self.max_seq < MIN_MAX_SEQ {
            return invalid(format!("max_seq must be at least {MIN_MAX_SEQ}, got {}", self.max_seq));
        }
        DiffusionSchedule::from_config(&self.schedule)?;
        Ok(())
    }

    /// Number of trainable scalars; depends only on the configuration.
    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}
