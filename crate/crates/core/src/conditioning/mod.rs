//! Reference-guided priors and per-frame audio features.
//!
//! A structured input stacks two reference rows on top of the `n` motion
//! latents:
//!
//! * row 0 holds the canonical keypoints in the deformation slot
//!   (indices 7..70) with the transform slots zero-padded,
//! * row 1 holds the flattened motion of the reference frame,
//! * rows 2.. hold the (clean or noised) motion latents.

mod mel;

use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::error::{invalid, Result};
use crate::motion::{flatten_frame, CanonicalKeypoints, MotionFrame, DELTA_OFFSET, LATENT_DIM};

pub use mel::{
    hz_to_mel, mel_features, mel_filterbank, mel_spectrogram, mel_to_hz, CONTEXT_COLUMNS, FMAX, FMIN, HOP_LENGTH,
    MEL_FEATURE_DIM, N_MELS, SAMPLE_RATE, WIN_LENGTH,
};

pub const REFERENCE_ROWS: usize = 2;
pub const VIDEO_FPS: usize = 25;

/// `2 × 70` reference rows for canonical keypoints and reference motion.
pub fn build_reference_rows(canonical: &CanonicalKeypoints, motion0: &MotionFrame) -> Array2<f64> {
    let mut rows = Array2::zeros((REFERENCE_ROWS, LATENT_DIM));
    for (dst, v) in rows
        .slice_mut(s![0, DELTA_OFFSET..])
        .iter_mut()
        .zip(canonical.flatten())
    {
        *dst = v;
    }
    rows.row_mut(1)
        .assign(&ArrayView2::from(&[flatten_frame(motion0).0]).row(0));
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredInput {
    pub rows: Array2<f64>,
    pub n: usize,
}

impl StructuredInput {
    pub fn references(&self) -> ArrayView2<'_, f64> {
        self.rows.slice(s![..REFERENCE_ROWS, ..])
    }

    pub fn motion(&self) -> ArrayView2<'_, f64> {
        self.rows.slice(s![REFERENCE_ROWS.., ..])
    }
}

/// Stacks reference rows over `n × 70` motion latents.
pub fn assemble_input(reference: ArrayView2<f64>, motion: ArrayView2<f64>) -> Result<StructuredInput> {
    if reference.dim() != (REFERENCE_ROWS, LATENT_DIM) {
        return invalid(format!(
            "reference rows must be {REFERENCE_ROWS}×{LATENT_DIM}, got {:?}",
            reference.dim()
        ));
    }
    if motion.ncols() != LATENT_DIM {
        return invalid(format!(
            "motion latents must be {LATENT_DIM} wide, got {}",
            motion.ncols()
        ));
    }
    Ok(StructuredInput {
        rows: concatenate![Axis(0), reference, motion],
        n: motion.nrows(),
    })
}

/// Drops the two reference rows.
pub fn strip_references(out: ArrayView2<f64>) -> Result<Array2<f64>> {
    if out.nrows() < REFERENCE_ROWS {
        return invalid(format!("expected at least {REFERENCE_ROWS} rows, got {}", out.nrows()));
    }
    if out.ncols() != LATENT_DIM {
        return invalid(format!("expected {LATENT_DIM} columns, got {}", out.ncols()));
    }
    Ok(out.slice(s![REFERENCE_ROWS.., ..]).to_owned())
}

/// One feature vector per video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureSequence {
    features: Array2<f64>,
}

impl AudioFeatureSequence {
    pub fn new(features: Array2<f64>) -> Result<Self> {
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            let cols = features.ncols().max(1);
            return invalid(format!(
                "non-finite audio feature at row {}, column {}",
                pos / cols,
                pos % cols
            ));
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.features
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows `start..end`.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return invalid(format!("window {start}..{end} outside 0..{}", self.len()));
        }
        Ok(Self {
            features: self.features.slice(s![start..end, ..]).to_owned(),
        })
    }
}

/// Reads a feature file written by [`crate::io::write_features`].
pub fn load_features(path: &Path) -> Result<AudioFeatureSequence> {
    crate::io::read_features(path)
}
