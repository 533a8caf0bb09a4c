//! Training on structured inputs, synthetic data, and windowed sampling.

mod normalize;
pub(crate) mod sample;
mod synthetic;
mod train;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserConfig};

pub use normalize::LatentNormalizer;
pub use sample::{chunked_generate, generate, generate_batch, GenerationRequest};
pub use synthetic::{
    envelope_direction, lip_response, lip_value, make_sample, make_synthetic_dataset, make_synthetic_dataset_with,
    template_canonical, Dataset, SyntheticConfig, SyntheticSample, DEFAULT_AUDIO_DIM, LIP_CHANNEL, LIP_KEYPOINT,
};
pub use train::{masked_loss_and_grad, train, train_with, TrainConfig, TrainOutcome, FULL_SCALE_BATCH};

/// Everything needed to sample: network weights plus the data statistics
/// it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub denoiser: Denoiser,
    pub normalizer: LatentNormalizer,
    /// Frames per generation window.
    pub window: usize,
    /// Ablation: the canonical-keypoint reference row is zeroed.
    pub drop_canonical_row: bool,
    /// Optimizer steps taken; 0 for an untrained model.
    pub trained_steps: usize,
    pub seed: u64,
}

/// Configuration echo stored alongside checkpoint weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub denoiser: DenoiserConfig,
    pub normalizer: LatentNormalizer,
    pub window: usize,
    pub drop_canonical_row: bool,
    pub trained_steps: usize,
    pub seed: u64,
}

impl TrainedModel {
    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            denoiser: self.denoiser.config().clone(),
            normalizer: self.normalizer.clone(),
            window: self.window,
            drop_canonical_row: self.drop_canonical_row,
            trained_steps: self.trained_steps,
            seed: self.seed,
        }
    }

    pub fn from_meta(meta: ModelMeta, params: Vec<f64>) -> crate::Result<Self> {
        Ok(Self {
            denoiser: Denoiser::with_params(meta.denoiser, params)?,
            normalizer: meta.normalizer,
            window: meta.window,
            drop_canonical_row: meta.drop_canonical_row,
            trained_steps: meta.trained_steps,
            seed: meta.seed,
        })
    }
}

/// Derives an independent stream seed for item `index` of a seeded run.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        ^ index
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
