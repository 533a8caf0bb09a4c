//! Log-mel features at 16 kHz, sliced into per-video-frame context windows.

use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioFeatureSequence, VIDEO_FPS};
use crate::error::{invalid, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_MELS: usize = 80;
/// 25 ms analysis window.
pub const WIN_LENGTH: usize = 400;
/// 10 ms hop.
pub const HOP_LENGTH: usize = 160;
pub const FMIN: f64 = 55.0;
pub const FMAX: f64 = 7_600.0;
/// Mel columns per video frame feature (0.2 s of context).
pub const CONTEXT_COLUMNS: usize = 20;
pub const MEL_FEATURE_DIM: usize = CONTEXT_COLUMNS * N_MELS;

const SAMPLES_PER_VIDEO_FRAME: usize = SAMPLE_RATE as usize / VIDEO_FPS;
const COLUMNS_PER_VIDEO_FRAME: usize = SAMPLES_PER_VIDEO_FRAME / HOP_LENGTH;
const POWER_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, `n_mels × (n_fft / 2 + 1)`, with edges equally spaced
/// on the mel scale between `fmin` and `fmax`.
pub fn mel_filterbank(n_fft: usize, sample_rate: f64, n_mels: usize, fmin: f64, fmax: f64) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    Array2::from_shape_fn((n_mels, n_bins), |(m, k)| {
        let f = k as f64 * sample_rate / n_fft as f64;
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= left || f >= right {
            0.0
        } else if f <= center {
            (f - left) / (center - left)
        } else {
            (right - f) / (right - center)
        }
    })
}

struct Stft {
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    window: Vec<f64>,
    filters: Array2<f64>,
}

impl Stft {
    fn new() -> Self {
        let window = (0..WIN_LENGTH)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / WIN_LENGTH as f64).cos())
            .collect();
        Self {
            fft: FftPlanner::new().plan_fft_forward(WIN_LENGTH),
            window,
            filters: mel_filterbank(WIN_LENGTH, f64::from(SAMPLE_RATE), N_MELS, FMIN, FMAX),
        }
    }

    /// Log-mel column centered on sample `column · hop`; samples outside the
    /// waveform are zero.
    fn column(&self, wave: &[f32], column: isize) -> Array1<f64> {
        let start = column * HOP_LENGTH as isize - (WIN_LENGTH / 2) as isize;
        let mut buf: Vec<Complex<f64>> = (0..WIN_LENGTH)
            .map(|i| {
                let idx = start + i as isize;
                let s = if idx >= 0 && (idx as usize) < wave.len() {
                    f64::from(wave[idx as usize])
                } else {
                    0.0
                };
                Complex::new(s * self.window[i], 0.0)
            })
            .collect();
        self.fft.process(&mut buf);
        let power = Array1::from_iter(buf[..WIN_LENGTH / 2 + 1].iter().map(|c| c.norm_sqr()));
        self.filters.dot(&power).mapv(|v| v.max(POWER_FLOOR).ln())
    }
}

/// Full log-mel spectrogram, `columns × N_MELS`, one column per hop.
pub fn mel_spectrogram(wave: &[f32]) -> Array2<f64> {
    let stft = Stft::new();
    let cols = wave.len() / HOP_LENGTH + 1;
    let mut out = Array2::zeros((cols, N_MELS));
    for (c, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&stft.column(wave, c as isize));
    }
    out
}

/// Per-video-frame features: for frame `k` the 20 mel columns centered on
/// `k / 25` s are laid out one after another (80 bins each) in one
/// 1600-wide vector.
pub fn mel_features(wave: &[f32], n_frames: usize) -> Result<AudioFeatureSequence> {
    let needed = n_frames * SAMPLES_PER_VIDEO_FRAME;
    if wave.len() < needed {
        return invalid(format!(
            "audio too short: {n_frames} frames need {:.3} s ({needed} samples at {SAMPLE_RATE} Hz), got {:.3} s",
            needed as f64 / f64::from(SAMPLE_RATE),
            wave.len() as f64 / f64::from(SAMPLE_RATE)
        ));
    }
    let stft = Stft::new();
    let half = (CONTEXT_COLUMNS / 2) as isize;
    let first = -half;
    let last = (n_frames.max(1) as isize - 1) * COLUMNS_PER_VIDEO_FRAME as isize + half;
    let columns: Vec<Array1<f64>> = (first..last).map(|c| stft.column(wave, c)).collect();
    let mut out = Array2::zeros((n_frames, MEL_FEATURE_DIM));
    for (k, mut row) in out.rows_mut().into_iter().enumerate() {
        let center = (k * COLUMNS_PER_VIDEO_FRAME) as isize;
        for j in 0..CONTEXT_COLUMNS {
            let col = &columns[(center - half + j as isize - first) as usize];
            row.slice_mut(ndarray::s![j * N_MELS..(j + 1) * N_MELS]).assign(col);
        }
    }
    AudioFeatureSequence::new(out)
}
