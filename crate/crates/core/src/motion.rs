//! Keypoint and motion data model.
//!
//! A [`MotionFrame`] carries one frame's transform `(s, R, t, δ)`. Driving
//! keypoints are produced row-wise as `x_d = s · (x_c · R + δ) + t`, with
//! keypoints treated as row vectors. Frames map to fixed-width latent vectors
//! with layout `[s | pitch yaw roll | tx ty tz | δ row-major]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const NUM_KEYPOINTS: usize = 21;
/// Width of one latent row: 1 scale + 3 angles + 3 translation + 21×3 deformation.
pub const LATENT_DIM: usize = 1 + 3 + 3 + NUM_KEYPOINTS * 3;
pub const SCALE_INDEX: usize = 0;
pub const ROTATION_OFFSET: usize = 1;
pub const TRANSLATION_OFFSET: usize = 4;
pub const DELTA_OFFSET: usize = 7;

pub type Keypoints = [[f64; 3]; NUM_KEYPOINTS];
pub type Mat3 = [[f64; 3]; 3];

/// Latent index of deformation coordinate `coord` of keypoint `point`.
pub const fn delta_index(point: usize, coord: usize) -> usize {
    DELTA_OFFSET + 3 * point + coord
}

/// Identity-specific base keypoints of a reference face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalKeypoints {
    pub points: Keypoints,
}

impl CanonicalKeypoints {
    pub fn new(points: Keypoints) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("canonical keypoints contain non-finite values");
        }
        Ok(Self { points })
    }

    pub fn zeros() -> Self {
        Self {
            points: [[0.0; 3]; NUM_KEYPOINTS],
        }
    }

    /// Row-major flattening, length 63.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn unflatten(values: &[f64]) -> Result<Self> {
        Self::new(keypoints_from_flat(values, "canonical keypoints")?)
    }

    /// Builds from a list of rows; every row must have exactly three entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != NUM_KEYPOINTS {
            return invalid(format!(
                "canonical keypoints need {NUM_KEYPOINTS} rows, got {}",
                rows.len()
            ));
        }
        let mut points = [[0.0; 3]; NUM_KEYPOINTS];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != 3 {
                return invalid(format!("keypoint row {i} has {} columns, expected 3", row.len()));
            }
            points[i].copy_from_slice(row);
        }
        Self::new(points)
    }
}

pub(crate) fn keypoints_from_flat(values: &[f64], what: &str) -> Result<Keypoints> {
    if values.len() != NUM_KEYPOINTS * 3 {
        return invalid(format!(
            "{what}: expected {} values, got {}",
            NUM_KEYPOINTS * 3,
            values.len()
        ));
    }
    let mut points = [[0.0; 3]; NUM_KEYPOINTS];
    for (p, chunk) in points.iter_mut().zip(values.chunks_exact(3)) {
        p.copy_from_slice(chunk);
    }
    Ok(points)
}

/// Head rotation in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub fn new(pitch: f64, yaw: f64, roll: f64) -> Self {
        Self { pitch, yaw, roll }
    }

    /// Wraps every angle into `[-180, 180)`.
    pub fn normalized(self) -> Self {
        Self {
            pitch: wrap_degrees(self.pitch),
            yaw: wrap_degrees(self.yaw),
            roll: wrap_degrees(self.roll),
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.pitch, self.yaw, self.roll]
    }
}

pub fn wrap_degrees(angle: f64) -> f64 {
    let wrapped = (angle + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// One frame's transform parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionFrame {
    pub scale: f64,
    pub rotation: EulerAngles,
    pub translation: [f64; 3],
    pub delta: Keypoints,
}

impl MotionFrame {
    /// Unit scale, no rotation, no translation, no deformation.
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: EulerAngles::default(),
            translation: [0.0; 3],
            delta: [[0.0; 3]; NUM_KEYPOINTS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return invalid(format!("scale must be positive and finite, got {}", self.scale));
        }
        let finite = self.rotation.as_array().iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.delta.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return invalid("motion frame contains non-finite values");
        }
        Ok(())
    }
}

/// Flattened per-frame latent vector (length [`LATENT_DIM`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentFrame(pub [f64; LATENT_DIM]);

impl LatentFrame {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<&[f64]> for LatentFrame {
    type Error = crate::Error;

    fn try_from(values: &[f64]) -> Result<Self> {
        if values.len() != LATENT_DIM {
            return invalid(format!(
                "latent frame must have {LATENT_DIM} values, got {}",
                values.len()
            ));
        }
        let mut out = [0.0; LATENT_DIM];
        out.copy_from_slice(values);
        Ok(Self(out))
    }
}

fn axis_x(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]]
}

fn axis_y(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]]
}

fn axis_z(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]]
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rotation matrix acting on row vectors (`x' = x · R`).
///
/// Pitch turns about x, yaw about y, roll about z; `R = R_roll · R_pitch · R_yaw`.
pub fn rotation_from_euler(rot: EulerAngles) -> Result<Mat3> {
    if !rot.as_array().iter().all(|v| v.is_finite()) {
        return invalid(format!("non-finite Euler angles {rot:?}"));
    }
    Ok(mat3_mul(
        &mat3_mul(&axis_z(rot.roll), &axis_x(rot.pitch)),
        &axis_y(rot.yaw),
    ))
}

/// Driving keypoints `x_d = s · (x_c · R + δ) + t`.
pub fn apply_motion(canonical: &CanonicalKeypoints, frame: &MotionFrame) -> Result<Keypoints> {
    frame.validate()?;
    let r = rotation_from_euler(frame.rotation)?;
    let mut out = [[0.0; 3]; NUM_KEYPOINTS];
    for ((dst, p), d) in out.iter_mut().zip(&canonical.points).zip(&frame.delta) {
        for j in 0..3 {
            let rotated = p[0] * r[0][j] + p[1] * r[1][j] + p[2] * r[2][j];
            dst[j] = frame.scale * (rotated + d[j]) + frame.translation[j];
        }
    }
    Ok(out)
}

pub fn flatten_frame(frame: &MotionFrame) -> LatentFrame {
    let mut v = [0.0; LATENT_DIM];
    v[SCALE_INDEX] = frame.scale;
    v[ROTATION_OFFSET..TRANSLATION_OFFSET].copy_from_slice(&frame.rotation.as_array());
    v[TRANSLATION_OFFSET..DELTA_OFFSET].copy_from_slice(&frame.translation);
    for (chunk, d) in v[DELTA_OFFSET..].chunks_exact_mut(3).zip(&frame.delta) {
        chunk.copy_from_slice(d);
    }
    LatentFrame(v)
}

/// Inverse of [`flatten_frame`]. Only the length is checked; the scale of a
/// sampled latent is not guaranteed positive until it is validated.
pub fn unflatten_frame(values: &[f64]) -> Result<MotionFrame> {
    if values.len() != LATENT_DIM {
        return invalid(format!(
            "latent frame must have {LATENT_DIM} values, got {}",
            values.len()
        ));
    }
    Ok(MotionFrame {
        scale: values[SCALE_INDEX],
        rotation: EulerAngles::new(values[1], values[2], values[3]),
        translation: [values[4], values[5], values[6]],
        delta: keypoints_from_flat(&values[DELTA_OFFSET..], "deformation")?,
    })
}

/// Ordered motion frames at a fixed frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub frames: Vec<MotionFrame>,
}

impl MotionSequence {
    pub const FPS: u32 = 25;

    pub fn new(frames: Vec<MotionFrame>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Values of a single latent channel across frames.
    pub fn channel(&self, index: usize) -> Vec<f64> {
        self.frames.iter().map(|f| flatten_frame(f).0[index]).collect()
    }

    pub fn poses(&self) -> Vec<[f64; 3]> {
        self.frames.iter().map(|f| f.rotation.as_array()).collect()
    }
}
