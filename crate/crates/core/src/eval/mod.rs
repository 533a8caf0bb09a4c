//! Motion metrics, throughput benchmark and the ablation harness.

mod ablation;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::motion::MotionSequence;
use crate::pipeline::sample::sample_batch;
use crate::pipeline::{generate_batch, GenerationRequest, SyntheticSample, TrainedModel, LIP_CHANNEL};

pub use ablation::{
    run_ablation, AblationRow, AblationSettings, AblationTable, ModelCache, Variant, FRAME_SWEEP, STEP_SWEEP,
};

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean over pitch, yaw and roll of each channel's population standard
/// deviation across frames, in degrees.
pub fn head_diversity(seq: &MotionSequence) -> Result<f64> {
    if seq.len() < 2 {
        return invalid(format!("head diversity needs at least 2 frames, got {}", seq.len()));
    }
    let poses = seq.poses();
    let total: f64 = (0..3)
        .map(|c| population_std(&poses.iter().map(|p| p[c]).collect::<Vec<_>>()))
        .sum();
    Ok(total / 3.0)
}

/// Mean squared second difference of the pose channels; lower is smoother.
pub fn smoothness(seq: &MotionSequence) -> Result<f64> {
    if seq.len() < 3 {
        return invalid(format!("smoothness needs at least 3 frames, got {}", seq.len()));
    }
    let poses = seq.poses();
    let mut acc = 0.0;
    for w in poses.windows(3) {
        for ((a, b), c) in w[0].iter().zip(&w[1]).zip(&w[2]) {
            acc += (c - 2.0 * b + a).powi(2);
        }
    }
    Ok(acc / (3 * (poses.len() - 2)) as f64)
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let constant = |xs: &[f64]| xs.iter().all(|&x| x == xs[0]);
    if a.is_empty() || constant(a) || constant(b) {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncScore {
    pub r: f64,
    /// Set when a signal had zero variance and `r` was defined as 0.
    pub degenerate: bool,
}

/// Pearson correlation between the lip-proxy channel and the envelope.
pub fn sync_correlation(seq: &MotionSequence, envelope: &[f64]) -> Result<SyncScore> {
    if seq.len() != envelope.len() {
        return invalid(format!(
            "sequence has {} frames but the envelope has {}",
            seq.len(),
            envelope.len()
        ));
    }
    if seq.len() < 3 {
        return invalid(format!("sync correlation needs at least 3 frames, got {}", seq.len()));
    }
    match pearson(&seq.channel(LIP_CHANNEL), envelope) {
        Some(r) => Ok(SyncScore { r, degenerate: false }),
        None => {
            log::warn!("sync correlation on a zero-variance signal; reporting 0");
            Ok(SyncScore {
                r: 0.0,
                degenerate: true,
            })
        }
    }
}

/// Median frames per second of keypoint generation (no rendering) for one
/// `n`-frame window with `steps` DDIM steps, over `repeats` timed runs.
pub fn fps_benchmark(model: &TrainedModel, n: usize, steps: usize, repeats: usize) -> Result<f64> {
    if repeats == 0 || n == 0 {
        return invalid("benchmark needs positive frame and repeat counts");
    }
    let canonical = crate::motion::CanonicalKeypoints::zeros();
    let motion0 = crate::motion::MotionFrame::identity();
    let audio =
        crate::conditioning::AudioFeatureSequence::new(ndarray::Array2::zeros((n, model.denoiser.config().audio_dim)))?;
    let req = GenerationRequest {
        canonical: &canonical,
        motion0: &motion0,
        audio: &audio,
    };
    let mut rates = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let start = Instant::now();
        sample_batch(model, &[req], steps, r as u64)?;
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        rates.push(n as f64 / secs);
    }
    rates.sort_by(f64::total_cmp);
    let mid = rates.len() / 2;
    Ok(if rates.len() % 2 == 1 {
        rates[mid]
    } else {
        0.5 * (rates[mid - 1] + rates[mid])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub diversity: f64,
    pub smoothness: f64,
    pub sync_r: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub diversity: f64,
    pub smoothness: f64,
    pub sync_r: f64,
    pub fps: f64,
    pub per_sequence: Vec<SequenceMetrics>,
}

impl EvalReport {
    /// Aggregates per-sequence metrics by their means.
    pub fn from_sequences(per_sequence: Vec<SequenceMetrics>, fps: f64) -> Self {
        let n = per_sequence.len().max(1) as f64;
        let mean = |f: fn(&SequenceMetrics) -> f64| per_sequence.iter().map(f).sum::<f64>() / n;
        Self {
            diversity: mean(|m| m.diversity),
            smoothness: mean(|m| m.smoothness),
            sync_r: mean(|m| m.sync_r),
            fps,
            per_sequence,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "diversity  {:.6}\nsmoothness {:.6}\nsync_r     {:.6}\nfps        {:.3}\nsequences  {}\n",
            self.diversity,
            self.smoothness,
            self.sync_r,
            self.fps,
            self.per_sequence.len()
        );
        for (i, m) in self.per_sequence.iter().enumerate() {
            out.push_str(&format!(
                "  [{i}] diversity {:.6} smoothness {:.6} sync_r {:.6}{}\n",
                m.diversity,
                m.smoothness,
                m.sync_r,
                if m.degenerate { " (degenerate)" } else { "" }
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Metrics of one sequence; `envelope` may be empty when unknown, in which
/// case sync is reported as degenerate.
pub fn sequence_metrics(seq: &MotionSequence, envelope: &[f64]) -> Result<SequenceMetrics> {
    let sync = if envelope.is_empty() {
        SyncScore {
            r: 0.0,
            degenerate: true,
        }
    } else {
        sync_correlation(seq, envelope)?
    };
    Ok(SequenceMetrics {
        diversity: head_diversity(seq)?,
        smoothness: smoothness(seq)?,
        sync_r: sync.r,
        degenerate: sync.degenerate,
    })
}

/// Generates motion for every sample and scores it against the sample's
/// envelope. `fps` is left at 0; callers fill it from [`fps_benchmark`].
pub fn evaluate(model: &TrainedModel, samples: &[SyntheticSample], steps: usize, seed: u64) -> Result<EvalReport> {
    let requests: Vec<GenerationRequest> = samples
        .iter()
        .map(|s| GenerationRequest {
            canonical: &s.canonical,
            motion0: &s.motion0,
            audio: &s.audio,
        })
        .collect();
    let seqs = generate_batch(model, &requests, steps, seed)?;
    let per = seqs
        .iter()
        .zip(samples)
        .map(|(q, s)| sequence_metrics(q, &s.envelope))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_sequences(per, 0.0))
}
