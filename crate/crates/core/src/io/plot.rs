//! Orthographic (x, y) scatter plots of driving keypoints, one PNG per frame.

use std::path::{Path, PathBuf};

use crate::error::{file_err, Result};
use crate::motion::{apply_motion, CanonicalKeypoints, Keypoints, MotionSequence};

pub const PLOT_SIZE: u32 = 256;
/// Both axes span `[-PLOT_EXTENT, PLOT_EXTENT]` in every frame.
const PLOT_EXTENT: f64 = 1.5;
const DOT_RADIUS: i64 = 2;

/// Colors by face region, indexed like the keypoints.
fn color(point: usize) -> [u8; 3] {
    match point {
        0..=6 => [90, 90, 90],
        7..=12 => [30, 80, 200],
        13..=14 => [40, 150, 60],
        15..=18 => [210, 40, 40],
        _ => [150, 100, 40],
    }
}

/// Pixel column/row of a keypoint; `y` points up.
pub(crate) fn to_pixel(x: f64, y: f64) -> (i64, i64) {
    let size = f64::from(PLOT_SIZE);
    let px = (x + PLOT_EXTENT) / (2.0 * PLOT_EXTENT) * size;
    let py = (PLOT_EXTENT - y) / (2.0 * PLOT_EXTENT) * size;
    (px.floor() as i64, py.floor() as i64)
}

/// RGB pixels, row-major, `PLOT_SIZE²·3` bytes.
pub fn render_frame(points: &Keypoints) -> Vec<u8> {
    let size = PLOT_SIZE as i64;
    let mut img = vec![255u8; (size * size * 3) as usize];
    // axes through the origin
    let (ox, oy) = to_pixel(0.0, 0.0);
    for i in 0..size {
        for (x, y) in [(i, oy), (ox, i)] {
            if (0..size).contains(&x) && (0..size).contains(&y) {
                let o = ((y * size + x) * 3) as usize;
                img[o..o + 3].copy_from_slice(&[225, 225, 225]);
            }
        }
    }
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = to_pixel(p[0], p[1]);
        for dy in -DOT_RADIUS..=DOT_RADIUS {
            for dx in -DOT_RADIUS..=DOT_RADIUS {
                let (x, y) = (cx + dx, cy + dy);
                if (0..size).contains(&x) && (0..size).contains(&y) {
                    let o = ((y * size + x) * 3) as usize;
                    img[o..o + 3].copy_from_slice(&color(i));
                }
            }
        }
    }
    img
}

fn write_png(path: &Path, pixels: &[u8]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(file_err(path))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), PLOT_SIZE, PLOT_SIZE);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(pixels)?;
    writer.finish()?;
    Ok(())
}

/// Writes `frame_0000.png`, `frame_0001.png`, … into `out_dir`.
pub fn emit_plot_frames(seq: &MotionSequence, canonical: &CanonicalKeypoints, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(file_err(out_dir))?;
    let mut paths = Vec::with_capacity(seq.len());
    for (k, f) in seq.frames.iter().enumerate() {
        let path = out_dir.join(format!("frame_{k:04}.png"));
        write_png(&path, &render_frame(&apply_motion(canonical, f)?))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{EulerAngles, MotionFrame, NUM_KEYPOINTS};

    fn face() -> CanonicalKeypoints {
        let mut p = [[0.0; 3]; NUM_KEYPOINTS];
        for (i, q) in p.iter_mut().enumerate() {
            let a = i as f64 / NUM_KEYPOINTS as f64 * std::f64::consts::TAU;
            *q = [0.5 * a.cos(), 0.5 * a.sin(), 0.3];
        }
        CanonicalKeypoints::new(p).unwrap()
    }

    fn yaw_seq(yaws: &[f64]) -> MotionSequence {
        MotionSequence::new(
            yaws.iter()
                .map(|&y| MotionFrame {
                    rotation: EulerAngles::new(0.0, y, 0.0),
                    ..MotionFrame::identity()
                })
                .collect(),
        )
    }

    #[test]
    fn files_named_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let seq = yaw_seq(&[0.0, 5.0, 10.0]);
        let a = emit_plot_frames(&seq, &face(), &dir.path().join("a")).unwrap();
        let b = emit_plot_frames(&seq, &face(), &dir.path().join("b")).unwrap();
        let names: Vec<_> = a
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["frame_0000.png", "frame_0001.png", "frame_0002.png"]);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }

    #[test]
    fn yaw_moves_centroid_monotonically() {
        // For points at depth z, x' = x·cosθ + z·sinθ; the centroid shifts
        // by about z̄·θ for small θ, so a positive mean depth moves it right.
        let yaws: Vec<f64> = (-5..=5).map(|k| 2.0 * k as f64).collect();
        let cents: Vec<f64> = yaw_seq(&yaws)
            .frames
            .iter()
            .map(|f| {
                let img = render_frame(&apply_motion(&face(), f).unwrap());
                let (mut sx, mut cnt) = (0.0, 0.0);
                for (i, px) in img.chunks(3).enumerate() {
                    if px != [255, 255, 255] && px != [225, 225, 225] {
                        sx += (i % PLOT_SIZE as usize) as f64;
                        cnt += 1.0;
                    }
                }
                sx / cnt
            })
            .collect();
        for w in cents.windows(2) {
            assert!(w[1] > w[0], "{cents:?}");
        }
        let expected = 0.3 * 2.0 * 10f64.to_radians().sin() / (2.0 * PLOT_EXTENT) * f64::from(PLOT_SIZE);
        assert!(((cents[10] - cents[0]) - expected).abs() < 3.0, "{cents:?}");
    }

    #[test]
    fn unwritable_directory_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, b"x").unwrap();
        assert!(emit_plot_frames(&yaw_seq(&[0.0]), &face(), &file.join("sub")).is_err());
    }
}
