//! Synthetic talking-head motion with a known audio→lip relation.
//!
//! Every sample draws an identity (a jittered face template), smooth head
//! pose / scale / translation trajectories, and a smooth positive speech
//! envelope. The designated lip keypoint's δ-y follows the envelope through
//! an affine map whose gain and offset depend on the identity's mouth
//! geometry. Audio features are the envelope projected onto a fixed
//! direction plus isotropic noise.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditioning::{AudioFeatureSequence, VIDEO_FPS};
use crate::error::{invalid, Result};
use crate::motion::{
    delta_index, CanonicalKeypoints, EulerAngles, Keypoints, MotionFrame, MotionSequence, NUM_KEYPOINTS,
};

/// Lower-lip keypoint whose δ-y is the lip-proxy channel.
pub const LIP_KEYPOINT: usize = 18;
/// Latent index of the lip-proxy channel.
pub const LIP_CHANNEL: usize = delta_index(LIP_KEYPOINT, 1);
pub const DEFAULT_AUDIO_DIM: usize = 16;

const MOUTH_LEFT: usize = 15;
const MOUTH_RIGHT: usize = 17;
const EYES: [usize; 4] = [9, 10, 11, 12];
/// Fixed across datasets so a model trained on one generalizes to another.
const EMBEDDING_SEED: u64 = 0x6b64_6966_665f_6175;

/// Frontal face template: jaw (0–6), brows (7–8), eyes (9–12), nose
/// (13–14), mouth corners and lips (15–18), ears (19–20).
const TEMPLATE: Keypoints = [
    [-0.60, 0.10, -0.10],
    [-0.55, -0.25, -0.05],
    [-0.40, -0.55, 0.00],
    [0.00, -0.70, 0.05],
    [0.40, -0.55, 0.00],
    [0.55, -0.25, -0.05],
    [0.60, 0.10, -0.10],
    [-0.30, 0.45, 0.10],
    [0.30, 0.45, 0.10],
    [-0.35, 0.30, 0.05],
    [-0.15, 0.30, 0.08],
    [0.15, 0.30, 0.08],
    [0.35, 0.30, 0.05],
    [0.00, 0.20, 0.20],
    [0.00, -0.05, 0.35],
    [-0.25, -0.30, 0.12],
    [0.00, -0.25, 0.15],
    [0.25, -0.30, 0.12],
    [0.00, -0.40, 0.13],
    [-0.70, 0.20, -0.30],
    [0.70, 0.20, -0.30],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub audio_dim: usize,
    /// Peak yaw in degrees; pitch and roll use fixed fractions of it.
    pub pose_amplitude: f64,
    pub identity_jitter: f64,
    pub mouth_jitter: f64,
    /// δ-y displacement of the lip keypoint per unit envelope at unit gain.
    pub lip_amplitude: f64,
    pub feature_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            audio_dim: DEFAULT_AUDIO_DIM,
            pose_amplitude: 20.0,
            identity_jitter: 0.03,
            mouth_jitter: 0.06,
            lip_amplitude: 0.15,
            feature_noise: 0.15,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.audio_dim == 0 {
            return invalid("synthetic audio_dim must be positive");
        }
        if !(0.0..=30.0).contains(&self.pose_amplitude) {
            return invalid(format!(
                "pose amplitude must lie in [0, 30], got {}",
                self.pose_amplitude
            ));
        }
        let non_neg = [
            self.identity_jitter,
            self.mouth_jitter,
            self.lip_amplitude,
            self.feature_noise,
        ];
        if non_neg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("synthetic jitter, amplitude and noise must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub canonical: CanonicalKeypoints,
    pub motion0: MotionFrame,
    pub motion: MotionSequence,
    pub audio: AudioFeatureSequence,
    /// Ground-truth speech envelope, one value per frame.
    pub envelope: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SyntheticConfig,
    pub samples: Vec<SyntheticSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn audio_dim(&self) -> usize {
        self.samples.first().map_or(self.config.audio_dim, |s| s.audio.dim())
    }
}

/// Bounded smooth signal: a convex mix of sinusoids, range ⊂ [−1, 1].
struct Smooth {
    parts: Vec<(f64, f64, f64)>,
}

impl Smooth {
    fn new(rng: &mut ChaCha8Rng, components: usize, lo_hz: f64, hi_hz: f64) -> Self {
        let mut parts: Vec<(f64, f64, f64)> = (0..components)
            .map(|_| {
                let w: f64 = rng.gen_range(0.2..1.0);
                let f: f64 = rng.gen_range(lo_hz..hi_hz);
                let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                (w, f, phase)
            })
            .collect();
        let total: f64 = parts.iter().map(|p| p.0).sum();
        parts.iter_mut().for_each(|p| p.0 /= total);
        Self { parts }
    }

    fn at(&self, frame: f64) -> f64 {
        let t = frame / VIDEO_FPS as f64;
        self.parts
            .iter()
            .map(|&(w, f, ph)| w * (std::f64::consts::TAU * f * t + ph).sin())
            .sum()
    }
}

/// Unit direction carrying the envelope in feature space.
pub fn envelope_direction(audio_dim: usize) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(EMBEDDING_SEED);
    let v: Array1<f64> = (0..audio_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.dot(&v).sqrt();
    v / norm
}

/// Lip gain and rest offset implied by an identity's mouth geometry.
pub fn lip_response(canonical: &CanonicalKeypoints) -> (f64, f64) {
    let p = &canonical.points;
    let width = p[MOUTH_RIGHT][0] - p[MOUTH_LEFT][0];
    let template_width = TEMPLATE[MOUTH_RIGHT][0] - TEMPLATE[MOUTH_LEFT][0];
    let gain = (width / template_width).powi(3);
    let offset = 0.25 * (p[LIP_KEYPOINT][1] - TEMPLATE[LIP_KEYPOINT][1]);
    (gain, offset)
}

/// Lip-proxy value for one envelope sample.
pub fn lip_value(canonical: &CanonicalKeypoints, cfg: &SyntheticConfig, envelope: f64) -> f64 {
    let (gain, offset) = lip_response(canonical);
    offset + cfg.lip_amplitude * gain * envelope
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_add(0x632b_e59b_d9b4_e019)
}

fn identity(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> Result<CanonicalKeypoints> {
    let mut pts = TEMPLATE;
    for (i, p) in pts.iter_mut().enumerate() {
        let sigma = if (MOUTH_LEFT..=LIP_KEYPOINT).contains(&i) {
            cfg.mouth_jitter
        } else {
            cfg.identity_jitter
        };
        for v in p.iter_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    CanonicalKeypoints::new(pts)
}

/// The unjittered face template.
pub fn template_canonical() -> CanonicalKeypoints {
    CanonicalKeypoints { points: TEMPLATE }
}

/// Generates one sample from its own seed.
pub fn make_sample(cfg: &SyntheticConfig, n: usize, seed: u64) -> Result<SyntheticSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let canonical = identity(&mut rng, cfg)?;
    let yaw = Smooth::new(&mut rng, 3, 0.1, 0.8);
    let pitch = Smooth::new(&mut rng, 3, 0.1, 0.8);
    let roll = Smooth::new(&mut rng, 3, 0.1, 0.6);
    let scale = Smooth::new(&mut rng, 2, 0.1, 0.5);
    let trans: Vec<Smooth> = (0..3).map(|_| Smooth::new(&mut rng, 2, 0.1, 0.5)).collect();
    let blink = Smooth::new(&mut rng, 2, 0.2, 0.6);
    let env = Smooth::new(&mut rng, 4, 1.0, 4.0);
    let amp = cfg.pose_amplitude;

    let envelope_at = |k: f64| (0.5 + 0.45 * env.at(k)).clamp(0.05, 1.0);
    let frame_at = |k: f64| {
        let mut delta = [[0.0; 3]; NUM_KEYPOINTS];
        for &e in &EYES {
            delta[e][1] = 0.01 * blink.at(k);
        }
        delta[LIP_KEYPOINT][1] = lip_value(&canonical, cfg, envelope_at(k));
        MotionFrame {
            scale: 1.0 + 0.1 * scale.at(k),
            rotation: EulerAngles::new(0.5 * amp * pitch.at(k), amp * yaw.at(k), 0.3 * amp * roll.at(k)),
            translation: [0.05 * trans[0].at(k), 0.05 * trans[1].at(k), 0.02 * trans[2].at(k)],
            delta,
        }
    };

    let motion0 = frame_at(-1.0);
    let frames: Vec<MotionFrame> = (0..n).map(|k| frame_at(k as f64)).collect();
    let envelope: Vec<f64> = (0..n).map(|k| envelope_at(k as f64)).collect();

    let dir = envelope_direction(cfg.audio_dim);
    let mut feats = Array2::zeros((n, cfg.audio_dim));
    for (k, mut row) in feats.rows_mut().into_iter().enumerate() {
        for (v, d) in row.iter_mut().zip(dir.iter()) {
            *v = envelope[k] * d + cfg.feature_noise * rng.sample::<f64, _>(StandardNormal);
        }
    }

    Ok(SyntheticSample {
        canonical,
        motion0,
        motion: MotionSequence::new(frames),
        audio: AudioFeatureSequence::new(feats)?,
        envelope,
        seed,
    })
}

pub fn make_synthetic_dataset(num_sequences: usize, n: usize, seed: u64) -> Result<Dataset> {
    make_synthetic_dataset_with(SyntheticConfig::default(), num_sequences, n, seed)
}

pub fn make_synthetic_dataset_with(
    config: SyntheticConfig,
    num_sequences: usize,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_sequences == 0 || n == 0 {
        return invalid(format!(
            "dataset needs positive counts, got {num_sequences} sequences of {n} frames"
        ));
    }
    let samples = (0..num_sequences)
        .map(|i| make_sample(&config, n, sample_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { config, samples })
}
