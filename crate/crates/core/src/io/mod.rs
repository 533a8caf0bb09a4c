//! File formats: motion sequences, driving keypoints, audio features,
//! datasets, checkpoints, plot frames and WAV audio.
//!
//! The text formats share one shape: `#` comments, `key value` header lines
//! validated before any body record is read, then whitespace-separated
//! numbers in shortest round-trip notation.

mod checkpoint;
mod plot;
mod text;
mod wav;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::conditioning::AudioFeatureSequence;
use crate::error::{parse_err, Result};
use crate::motion::{
    apply_motion, flatten_frame, unflatten_frame, CanonicalKeypoints, Keypoints, MotionFrame, MotionSequence,
    LATENT_DIM, NUM_KEYPOINTS,
};
use crate::pipeline::{Dataset, SyntheticConfig, SyntheticSample};
use text::{check_version, json_err, push_row, write_text, Lines};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MANIFEST, CHECKPOINT_PARAMS};
pub use plot::{emit_plot_frames, render_frame, PLOT_SIZE};
pub use wav::{read_wav, write_wav};

pub const FORMAT_VERSION: u32 = 1;
pub const LAYOUT_TAG: &str = "s,pitch,yaw,roll,tx,ty,tz,delta21x3";
/// Coordinate-space tag: keypoints are in the canonical normalized space of
/// the keypoint detector, not pixels.
pub const SPACE_TAG: &str = "normalized";

fn read_header_counts(lines: &mut Lines) -> Result<usize> {
    let (_, n) = lines.usize_field("frames")?;
    let (no, fps) = lines.usize_field("fps")?;
    if fps != MotionSequence::FPS as usize {
        return Err(parse_err(no, format!("fps must be {}, got {fps}", MotionSequence::FPS)));
    }
    read_keypoint_count(lines)?;
    Ok(n)
}

fn read_keypoint_count(lines: &mut Lines) -> Result<()> {
    let (no, k) = lines.usize_field("keypoints")?;
    if k != NUM_KEYPOINTS {
        return Err(parse_err(
            no,
            format!("file declares {k} keypoints; the latent layout expects {NUM_KEYPOINTS}"),
        ));
    }
    Ok(())
}

fn expect_tag(lines: &mut Lines, key: &str, expected: &str) -> Result<()> {
    let (no, v) = lines.field(key)?;
    if v != expected {
        return Err(parse_err(
            no,
            format!("{key} `{v}` not supported, expected `{expected}`"),
        ));
    }
    Ok(())
}

fn read_points(lines: &mut Lines, what: &str) -> Result<Keypoints> {
    let mut pts = [[0.0; 3]; NUM_KEYPOINTS];
    for (i, p) in pts.iter_mut().enumerate() {
        let (_, v) = lines.floats(3, &format!("{what} point {i}"))?;
        p.copy_from_slice(&v);
    }
    Ok(pts)
}

fn push_points(out: &mut String, pts: &Keypoints) {
    for p in pts {
        push_row(out, p.iter().copied());
    }
}

/// Writes canonical keypoints and a motion sequence as text.
pub fn write_sequence(path: &Path, canonical: &CanonicalKeypoints, seq: &MotionSequence) -> Result<()> {
    let mut out = String::from("# kdiff motion sequence\n");
    out.push_str(&format!(
        "version {FORMAT_VERSION}\nframes {}\nfps {}\nkeypoints {NUM_KEYPOINTS}\nlayout {LAYOUT_TAG}\nspace {SPACE_TAG}\ncanonical\n",
        seq.len(),
        MotionSequence::FPS
    ));
    push_points(&mut out, &canonical.points);
    out.push_str("body\n");
    for f in &seq.frames {
        push_row(&mut out, flatten_frame(f).0);
    }
    write_text(path, &out)
}

pub fn read_sequence(path: &Path) -> Result<(CanonicalKeypoints, MotionSequence)> {
    parse_sequence(&mut Lines::read(path)?)
}

fn parse_sequence(lines: &mut Lines) -> Result<(CanonicalKeypoints, MotionSequence)> {
    check_version(lines, FORMAT_VERSION)?;
    let n = read_header_counts(lines)?;
    expect_tag(lines, "layout", LAYOUT_TAG)?;
    expect_tag(lines, "space", SPACE_TAG)?;
    lines.marker("canonical")?;
    let canonical = CanonicalKeypoints::new(read_points(lines, "canonical")?)?;
    lines.marker("body")?;
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let (no, v) = lines.floats(LATENT_DIM, &format!("frame {k}"))?;
        let frame = unflatten_frame(&v).map_err(|e| parse_err(no, e.to_string()))?;
        frames.push(frame);
    }
    lines.expect_end()?;
    Ok((canonical, MotionSequence::new(frames)))
}

/// Writes the driving keypoints `x_d` of every frame for an external renderer.
pub fn export_driving_keypoints(path: &Path, canonical: &CanonicalKeypoints, seq: &MotionSequence) -> Result<()> {
    let mut out = String::from("# kdiff driving keypoints\n");
    out.push_str(&format!(
        "version {FORMAT_VERSION}\nframes {}\nfps {}\nkeypoints {NUM_KEYPOINTS}\nspace {SPACE_TAG}\n",
        seq.len(),
        MotionSequence::FPS
    ));
    for (k, f) in seq.frames.iter().enumerate() {
        out.push_str(&format!("frame {k}\n"));
        push_points(&mut out, &apply_motion(canonical, f)?);
    }
    write_text(path, &out)
}

pub fn read_driving_keypoints(path: &Path) -> Result<Vec<Keypoints>> {
    let mut lines = Lines::read(path)?;
    check_version(&mut lines, FORMAT_VERSION)?;
    let n = read_header_counts(&mut lines)?;
    expect_tag(&mut lines, "space", SPACE_TAG)?;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (no, idx) = lines.usize_field("frame")?;
        if idx != k {
            return Err(parse_err(no, format!("expected frame {k}, found frame {idx}")));
        }
        out.push(read_points(&mut lines, &format!("frame {k}"))?);
    }
    lines.expect_end()?;
    Ok(out)
}

pub fn write_features(path: &Path, features: &AudioFeatureSequence) -> Result<()> {
    let mut out = String::from("# kdiff audio features\n");
    out.push_str(&format!(
        "version {FORMAT_VERSION}\nframes {}\ndim {}\n",
        features.len(),
        features.dim()
    ));
    for row in features.features().rows() {
        push_row(&mut out, row.iter().copied());
    }
    write_text(path, &out)
}

pub fn read_features(path: &Path) -> Result<AudioFeatureSequence> {
    let mut lines = Lines::read(path)?;
    check_version(&mut lines, FORMAT_VERSION)?;
    let (_, n) = lines.usize_field("frames")?;
    let (no, dim) = lines.usize_field("dim")?;
    if dim == 0 {
        return Err(parse_err(no, "feature dimension must be positive"));
    }
    let mut feats = Array2::zeros((n, dim));
    for (k, mut row) in feats.rows_mut().into_iter().enumerate() {
        let (_, v) = lines.floats(dim, &format!("feature row {k}"))?;
        row.assign(&ndarray::ArrayView1::from(&v[..]));
    }
    lines.expect_end()?;
    AudioFeatureSequence::new(feats)
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    canonical: Keypoints,
    motion0: MotionFrame,
    frames: Vec<MotionFrame>,
    audio: Vec<Vec<f64>>,
    envelope: Vec<f64>,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct DatasetRecord {
    format: String,
    version: u32,
    config: SyntheticConfig,
    samples: Vec<SampleRecord>,
}

const DATASET_FORMAT: &str = "kdiff-dataset";

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let record = DatasetRecord {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        config: dataset.config,
        samples: dataset
            .samples
            .iter()
            .map(|s| SampleRecord {
                canonical: s.canonical.points,
                motion0: s.motion0,
                frames: s.motion.frames.clone(),
                audio: s.audio.features().rows().into_iter().map(|r| r.to_vec()).collect(),
                envelope: s.envelope.clone(),
                seed: s.seed,
            })
            .collect(),
    };
    write_text(path, &serde_json::to_string(&record)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(crate::error::file_err(path))?;
    let record: DatasetRecord = serde_json::from_str(&text).map_err(|e| json_err(path, e))?;
    if record.format != DATASET_FORMAT || record.version != FORMAT_VERSION {
        return Err(parse_err(
            0,
            format!(
                "{}: expected {DATASET_FORMAT} version {FORMAT_VERSION}, found {} version {}",
                path.display(),
                record.format,
                record.version
            ),
        ));
    }
    let samples = record
        .samples
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let dim = s.audio.first().map_or(record.config.audio_dim, Vec::len);
            if let Some(r) = s.audio.iter().position(|r| r.len() != dim) {
                return Err(parse_err(0, format!("sample {i}: audio row {r} has the wrong width")));
            }
            let feats = Array2::from_shape_vec((s.audio.len(), dim), s.audio.concat())
                .map_err(|e| parse_err(0, format!("sample {i}: {e}")))?;
            Ok(SyntheticSample {
                canonical: CanonicalKeypoints::new(s.canonical)?,
                motion0: s.motion0,
                motion: MotionSequence::new(s.frames),
                audio: AudioFeatureSequence::new(feats)?,
                envelope: s.envelope,
                seed: s.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: record.config,
        samples,
    })
}
