use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mix_seed, TrainedModel};
use crate::conditioning::{build_reference_rows, AudioFeatureSequence, REFERENCE_ROWS};
use crate::denoiser::DenoiseBatch;
use crate::diffusion::{ddim_step, ddim_timesteps, standard_normal, DiffusionSchedule};
use crate::error::{invalid, Error, Result};
use crate::motion::{unflatten_frame, CanonicalKeypoints, MotionFrame, MotionSequence, LATENT_DIM};

/// One conditioning set for batched sampling.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub canonical: &'a CanonicalKeypoints,
    pub motion0: &'a MotionFrame,
    pub audio: &'a AudioFeatureSequence,
}

fn check_model(model: &TrainedModel) -> Result<()> {
    if model.trained_steps == 0 {
        return Err(Error::State("model has not been trained or loaded".into()));
    }
    Ok(())
}

fn reference_rows(model: &TrainedModel, req: &GenerationRequest) -> Array2<f64> {
    let raw = build_reference_rows(req.canonical, req.motion0);
    let mut refs = model.normalizer.normalize_reference(raw.view());
    if model.drop_canonical_row {
        refs.row_mut(0).fill(0.0);
    }
    refs
}

fn to_sequence(model: &TrainedModel, z: ArrayView2<f64>) -> Result<MotionSequence> {
    let raw = model.normalizer.denormalize_motion(z);
    let frames = raw
        .rows()
        .into_iter()
        .map(|r| unflatten_frame(&r.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(MotionSequence::new(frames))
}

/// Samples every request in one batched DDIM chain. Requests must share a
/// length; request `i` draws its noise from stream `i` of `seed`.
pub fn generate_batch(
    model: &TrainedModel,
    requests: &[GenerationRequest],
    steps: usize,
    seed: u64,
) -> Result<Vec<MotionSequence>> {
    check_model(model)?;
    sample_batch(model, requests, steps, seed)
}

/// [`generate_batch`] without the trained-model check.
pub(crate) fn sample_batch(
    model: &TrainedModel,
    requests: &[GenerationRequest],
    steps: usize,
    seed: u64,
) -> Result<Vec<MotionSequence>> {
    let Some(first) = requests.first() else {
        return Ok(Vec::new());
    };
    let n = first.audio.len();
    if n == 0 {
        return invalid("audio has no frames");
    }
    if n > model.window {
        return invalid(format!(
            "{n} audio frames exceed the {}-frame window; use chunked generation",
            model.window
        ));
    }
    let audio_dim = model.denoiser.config().audio_dim;
    for (i, r) in requests.iter().enumerate() {
        if r.audio.len() != n {
            return invalid(format!("request {i} has {} frames, expected {n}", r.audio.len()));
        }
        if r.audio.dim() != audio_dim {
            return invalid(format!(
                "request {i} audio features are {} wide, model expects {audio_dim}",
                r.audio.dim()
            ));
        }
    }

    let sched = DiffusionSchedule::from_config(&model.denoiser.config().schedule)?;
    let timesteps = ddim_timesteps(sched.len(), steps)?;
    let b = requests.len();
    let seq_len = n + REFERENCE_ROWS;
    let mask = model.normalizer.noise_mask();
    let refs: Vec<Array2<f64>> = requests.iter().map(|r| reference_rows(model, r)).collect();
    let mut audio = Array2::zeros((b * n, audio_dim));
    let mut z = Array2::zeros((b * n, LATENT_DIM));
    for (i, r) in requests.iter().enumerate() {
        audio.slice_mut(s![i * n..(i + 1) * n, ..]).assign(&r.audio.features());
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
        z.slice_mut(s![i * n..(i + 1) * n, ..])
            .assign(&(standard_normal(&mut rng, n, LATENT_DIM) * &mask));
    }

    let mut batch = DenoiseBatch {
        inputs: Array2::zeros((b * seq_len, LATENT_DIM)),
        audio,
        timesteps: vec![0; b],
        seq_len,
    };
    for (k, &t) in timesteps.steps.iter().enumerate() {
        let t_prev = timesteps.steps.get(k + 1).copied().unwrap_or(0);
        for (i, r) in refs.iter().enumerate() {
            let base = i * seq_len;
            // Reference rows are re-inserted clean at every step.
            batch.inputs.slice_mut(s![base..base + REFERENCE_ROWS, ..]).assign(r);
            batch
                .inputs
                .slice_mut(s![base + REFERENCE_ROWS..base + seq_len, ..])
                .assign(&z.slice(s![i * n..(i + 1) * n, ..]));
            debug_assert_eq!(batch.inputs.slice(s![base..base + REFERENCE_ROWS, ..]), r);
        }
        batch.timesteps.fill(t);
        let out = model.denoiser.forward(&batch)?;
        let mut eps = Array2::zeros((b * n, LATENT_DIM));
        for i in 0..b {
            eps.slice_mut(s![i * n..(i + 1) * n, ..])
                .assign(&out.slice(s![i * seq_len + REFERENCE_ROWS..(i + 1) * seq_len, ..]));
        }
        z = ddim_step(z.view(), (eps * &mask).view(), t, t_prev, &sched)?;
    }

    (0..b)
        .map(|i| to_sequence(model, z.slice(s![i * n..(i + 1) * n, ..])))
        .collect()
}

/// Samples one motion sequence for at most `model.window` audio frames.
pub fn generate(
    model: &TrainedModel,
    canonical: &CanonicalKeypoints,
    motion0: &MotionFrame,
    audio: &AudioFeatureSequence,
    steps: usize,
    seed: u64,
) -> Result<MotionSequence> {
    let req = GenerationRequest {
        canonical,
        motion0,
        audio,
    };
    Ok(generate_batch(model, &[req], steps, seed)?.remove(0))
}

/// Samples arbitrarily long audio window by window. Each window after the
/// first takes the previous window's last frame as its reference motion.
pub fn chunked_generate(
    model: &TrainedModel,
    canonical: &CanonicalKeypoints,
    motion0: &MotionFrame,
    audio: &AudioFeatureSequence,
    steps: usize,
    seed: u64,
) -> Result<MotionSequence> {
    check_model(model)?;
    let m = audio.len();
    if m <= model.window {
        return generate(model, canonical, motion0, audio, steps, seed);
    }
    let mut frames = Vec::with_capacity(m);
    let mut reference = *motion0;
    for (w, start) in (0..m).step_by(model.window).enumerate() {
        let end = (start + model.window).min(m);
        let chunk = audio.window(start, end)?;
        let window_seed = if w == 0 {
            seed
        } else {
            mix_seed(seed, 1 << 32 | w as u64)
        };
        let seq = generate(model, canonical, &reference, &chunk, steps, window_seed)?;
        reference = *seq.frames.last().expect("non-empty window");
        frames.extend(seq.frames);
    }
    Ok(MotionSequence::new(frames))
}
