use std::path::PathBuf;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, Dataset, LatentNormalizer, TrainedModel};
use crate::conditioning::{build_reference_rows, REFERENCE_ROWS};
use crate::denoiser::{DenoiseBatch, Denoiser, DenoiserConfig};
use crate::diffusion::{forward_sample, standard_normal, DiffusionSchedule};
use crate::error::{invalid, Error, Result};
use crate::motion::{flatten_frame, LATENT_DIM};
use crate::optim::{clip_grad_norm, AdamW, AdamWConfig, WarmupCosine};

/// Full-scale batch size; desk-scale runs use much smaller batches.
pub const FULL_SCALE_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Frames per training window.
    pub window: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub model: DenoiserConfig,
    pub drop_canonical_row: bool,
    /// Save a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: 64,
            batch_size: 32,
            total_steps: 2000,
            peak_lr: 5.12e-4,
            warmup_steps: 100,
            seed: 0,
            weight_decay: AdamWConfig::default().weight_decay,
            grad_clip: 1.0,
            model: DenoiserConfig::default(),
            drop_canonical_row: false,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// Desk-scale toy setting: 16-frame windows, a 64-wide model and a
    /// higher learning rate for the short run.
    pub fn toy() -> Self {
        Self {
            window: 16,
            total_steps: 5000,
            peak_lr: 2e-3,
            model: DenoiserConfig::toy(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return invalid("training window must be at least one frame");
        }
        if self.window + REFERENCE_ROWS > self.model.max_seq {
            return invalid(format!(
                "window of {} frames exceeds the model's {}-row limit",
                self.window, self.model.max_seq
            ));
        }
        if self.batch_size == 0 {
            return invalid("batch size must be positive");
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return invalid(format!("gradient clip must be positive, got {}", self.grad_clip));
        }
        self.model.validate()?;
        WarmupCosine::new(self.peak_lr, self.warmup_steps, self.total_steps)?;
        Ok(())
    }

    pub fn lr_schedule(&self) -> Result<WarmupCosine> {
        WarmupCosine::new(self.peak_lr, self.warmup_steps, self.total_steps)
    }
}

pub struct TrainOutcome {
    pub model: TrainedModel,
    /// Batch loss at every step.
    pub losses: Vec<f64>,
}

/// Mean squared error over motion rows only, with its gradient with respect
/// to the full `(B·S) × 70` network output (zero on reference rows).
pub fn masked_loss_and_grad(
    out: ArrayView2<f64>,
    target: ArrayView2<f64>,
    seq_len: usize,
) -> Result<(f64, Array2<f64>)> {
    if seq_len <= REFERENCE_ROWS || !out.nrows().is_multiple_of(seq_len) {
        return invalid(format!(
            "{} output rows do not split into {seq_len}-row inputs",
            out.nrows()
        ));
    }
    let b = out.nrows() / seq_len;
    let n = seq_len - REFERENCE_ROWS;
    if target.dim() != (b * n, out.ncols()) {
        return invalid(format!(
            "target has shape {:?}, expected ({}, {})",
            target.dim(),
            b * n,
            out.ncols()
        ));
    }
    let count = (b * n * out.ncols()) as f64;
    let mut grad = Array2::zeros(out.dim());
    let mut loss = 0.0;
    for i in 0..b {
        let pred = out.slice(s![i * seq_len + REFERENCE_ROWS..(i + 1) * seq_len, ..]);
        let tgt = target.slice(s![i * n..(i + 1) * n, ..]);
        let diff = &pred - &tgt;
        loss += diff.iter().map(|d| d * d).sum::<f64>();
        grad.slice_mut(s![i * seq_len + REFERENCE_ROWS..(i + 1) * seq_len, ..])
            .assign(&(diff * (2.0 / count)));
    }
    Ok((loss / count, grad))
}

/// Normalized per-sample tensors, prepared once.
struct Prepared {
    motion: Vec<Array2<f64>>,
    canonical: Vec<Array2<f64>>,
    audio: Vec<Array2<f64>>,
    raw_motion0: Vec<Array2<f64>>,
}

fn latents(frames: &[crate::motion::MotionFrame]) -> Array2<f64> {
    let mut m = Array2::zeros((frames.len(), LATENT_DIM));
    for (mut row, f) in m.rows_mut().into_iter().zip(frames) {
        row.assign(&ndarray::ArrayView1::from(&flatten_frame(f).0[..]));
    }
    m
}

fn fit_normalizer(dataset: &Dataset) -> LatentNormalizer {
    let motion: Vec<Array2<f64>> = dataset.samples.iter().map(|s| latents(&s.motion.frames)).collect();
    let views: Vec<_> = motion.iter().map(|m| m.view()).collect();
    let stacked = ndarray::concatenate(Axis(0), &views).expect("equal widths");
    let canon = Array2::from_shape_fn((dataset.len(), 63), |(i, j)| dataset.samples[i].canonical.flatten()[j]);
    LatentNormalizer::fit(stacked.view(), canon.view())
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, config, |_, _| {})
}

/// Trains from scratch; `on_step(step, loss)` is called after every step.
pub fn train_with<F>(dataset: &Dataset, config: &TrainConfig, mut on_step: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, f64),
{
    config.validate()?;
    if dataset.is_empty() {
        return invalid("cannot train on an empty dataset");
    }
    if let Some((i, s)) = dataset
        .samples
        .iter()
        .enumerate()
        .find(|(_, s)| s.motion.len() < config.window || s.audio.len() != s.motion.len())
    {
        return invalid(format!(
            "sample {i} has {} frames and {} audio rows; both must be equal and at least the {}-frame window",
            s.motion.len(),
            s.audio.len(),
            config.window
        ));
    }
    if dataset.audio_dim() != config.model.audio_dim {
        return invalid(format!(
            "dataset audio features are {} wide but the model expects {}",
            dataset.audio_dim(),
            config.model.audio_dim
        ));
    }

    let sched = DiffusionSchedule::from_config(&config.model.schedule)?;
    let lr = config.lr_schedule()?;
    let normalizer = fit_normalizer(dataset);
    let prepared = Prepared {
        motion: dataset
            .samples
            .iter()
            .map(|s| normalizer.normalize_motion(latents(&s.motion.frames).view()))
            .collect(),
        canonical: dataset
            .samples
            .iter()
            .map(|s| build_reference_rows(&s.canonical, &s.motion0))
            .collect(),
        audio: dataset.samples.iter().map(|s| s.audio.features().to_owned()).collect(),
        raw_motion0: dataset
            .samples
            .iter()
            .map(|s| latents(std::slice::from_ref(&s.motion0)))
            .collect(),
    };

    let mut denoiser = Denoiser::new(config.model.clone(), mix_seed(config.seed, 0))?;
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        denoiser.num_params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1));
    let mask = normalizer.noise_mask();
    let n = config.window;
    let seq_len = n + REFERENCE_ROWS;
    let bsz = config.batch_size;
    let mut losses = Vec::with_capacity(config.total_steps);

    let snapshot = |denoiser: &Denoiser, steps: usize| TrainedModel {
        denoiser: denoiser.clone(),
        normalizer: normalizer.clone(),
        window: n,
        drop_canonical_row: config.drop_canonical_row,
        trained_steps: steps,
        seed: config.seed,
    };

    for step in 0..config.total_steps {
        let mut inputs = Array2::zeros((bsz * seq_len, LATENT_DIM));
        let mut audio = Array2::zeros((bsz * n, config.model.audio_dim));
        let mut target = Array2::zeros((bsz * n, LATENT_DIM));
        let mut timesteps = Vec::with_capacity(bsz);
        for b in 0..bsz {
            let i = rng.gen_range(0..dataset.len());
            let len = prepared.motion[i].nrows();
            let start = rng.gen_range(0..=len - n);
            let t = rng.gen_range(1..=sched.len());
            let eps = standard_normal(&mut rng, n, LATENT_DIM) * &mask;

            let mut refs = prepared.canonical[i].clone();
            if start > 0 {
                // Windows inside a sequence take the preceding frame as reference motion.
                let raw = normalizer.denormalize_motion(prepared.motion[i].slice(s![start - 1..start, ..]));
                refs.row_mut(1).assign(&raw.row(0));
            } else {
                refs.row_mut(1).assign(&prepared.raw_motion0[i].row(0));
            }
            let mut refs = normalizer.normalize_reference(refs.view());
            if config.drop_canonical_row {
                refs.row_mut(0).fill(0.0);
            }
            let z0 = prepared.motion[i].slice(s![start..start + n, ..]);
            let zt = forward_sample(z0, t, eps.view(), &sched)?;

            let base = b * seq_len;
            inputs.slice_mut(s![base..base + REFERENCE_ROWS, ..]).assign(&refs);
            inputs
                .slice_mut(s![base + REFERENCE_ROWS..base + seq_len, ..])
                .assign(&zt);
            audio
                .slice_mut(s![b * n..(b + 1) * n, ..])
                .assign(&prepared.audio[i].slice(s![start..start + n, ..]));
            target.slice_mut(s![b * n..(b + 1) * n, ..]).assign(&eps);
            timesteps.push(t);
        }
        let batch = DenoiseBatch {
            inputs,
            audio,
            timesteps,
            seq_len,
        };
        let (out, cache) = denoiser.forward_train(&batch)?;
        let (loss, d_out) = masked_loss_and_grad(out.view(), target.view(), seq_len)?;
        let mut grads = denoiser.backward(&cache, d_out.view());
        let grad_norm = clip_grad_norm(&mut grads, config.grad_clip);
        let rate = lr.lr(step);
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                lr: rate,
                grad_norm,
            });
        }
        opt.step(denoiser.params_mut(), &grads, rate);
        losses.push(loss);
        on_step(step, loss);
        log::debug!("step {step} loss {loss:.6} lr {rate:.3e} grad_norm {grad_norm:.3e}");
        if step % 100 == 0 || step + 1 == config.total_steps {
            log::info!("step {step}/{} loss {loss:.5}", config.total_steps);
        }

        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            if let Some(dir) = &config.checkpoint_dir {
                let path = dir.join(format!("step_{:06}", step + 1));
                crate::io::save_checkpoint(&path, &snapshot(&denoiser, step + 1))?;
                log::info!("checkpoint written to {}", path.display());
            }
        }
    }

    Ok(TrainOutcome {
        model: snapshot(&denoiser, config.total_steps),
        losses,
    })
}
