//! Per-channel standardization of latent rows.
//!
//! Motion rows (and the reference-motion row) share one set of statistics;
//! the canonical row's keypoint slot uses statistics of the canonical
//! keypoints. Its zero-padded transform slots stay zero. Motion channels
//! that never vary in the training data are marked inactive: they carry no
//! diffusion noise and are pinned to their mean when sampling.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::motion::{DELTA_OFFSET, LATENT_DIM, NUM_KEYPOINTS};

const MIN_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentNormalizer {
    pub motion_mean: Vec<f64>,
    pub motion_std: Vec<f64>,
    pub canonical_mean: Vec<f64>,
    pub canonical_std: Vec<f64>,
    pub motion_active: Vec<bool>,
}

fn column_stats(rows: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    if rows.nrows() == 0 {
        return (vec![0.0; rows.ncols()], vec![1.0; rows.ncols()]);
    }
    let mean = rows.mean_axis(Axis(0)).expect("non-empty");
    let std = rows.std_axis(Axis(0), 0.0).mapv(|v| if v < MIN_STD { 1.0 } else { v });
    (mean.to_vec(), std.to_vec())
}

impl LatentNormalizer {
    pub fn identity() -> Self {
        Self {
            motion_mean: vec![0.0; LATENT_DIM],
            motion_std: vec![1.0; LATENT_DIM],
            canonical_mean: vec![0.0; NUM_KEYPOINTS * 3],
            canonical_std: vec![1.0; NUM_KEYPOINTS * 3],
            motion_active: vec![true; LATENT_DIM],
        }
    }

    /// `motion` stacks every motion latent row; `canonical` stacks flattened
    /// canonical keypoints (63 wide), one row per identity.
    pub fn fit(motion: ArrayView2<f64>, canonical: ArrayView2<f64>) -> Self {
        let (motion_mean, motion_std) = column_stats(motion);
        let (canonical_mean, canonical_std) = column_stats(canonical);
        let motion_active = if motion.nrows() == 0 {
            vec![true; motion.ncols()]
        } else {
            motion.std_axis(Axis(0), 0.0).iter().map(|&v| v >= MIN_STD).collect()
        };
        Self {
            motion_mean,
            motion_std,
            canonical_mean,
            canonical_std,
            motion_active,
        }
    }

    /// 1 for active motion channels, 0 for constant ones.
    pub fn noise_mask(&self) -> Array1<f64> {
        self.motion_active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect()
    }

    pub fn normalize_motion(&self, rows: ArrayView2<f64>) -> Array2<f64> {
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.motion_mean).zip(&self.motion_std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn denormalize_motion(&self, rows: ArrayView2<f64>) -> Array2<f64> {
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.motion_mean).zip(&self.motion_std) {
                *v = *v * s + m;
            }
        }
        out
    }

    /// Normalizes the `2 × 70` reference rows.
    pub fn normalize_reference(&self, refs: ArrayView2<f64>) -> Array2<f64> {
        let mut out = refs.to_owned();
        for ((v, m), s) in out
            .slice_mut(s![0, DELTA_OFFSET..])
            .iter_mut()
            .zip(&self.canonical_mean)
            .zip(&self.canonical_std)
        {
            *v = (*v - m) / s;
        }
        let motion = self.normalize_motion(refs.slice(s![1..2, ..]));
        out.slice_mut(s![1..2, ..]).assign(&motion);
        out
    }
}
