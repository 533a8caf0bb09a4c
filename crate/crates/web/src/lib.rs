//! WebAssembly bindings for the browser demo in `www/`.

use kdiff::diffusion::{forward_sample, make_schedule, standard_normal};
use kdiff::eval::{head_diversity, smoothness, sync_correlation};
use kdiff::motion::{apply_motion, EulerAngles, MotionFrame};
use kdiff::pipeline::{make_synthetic_dataset, template_canonical, LIP_CHANNEL, LIP_KEYPOINT};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: kdiff::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Driving keypoints of the template face, flattened as 21 × (x, y, z).
#[wasm_bindgen]
pub fn drive_template(
    pitch: f64,
    yaw: f64,
    roll: f64,
    scale: f64,
    tx: f64,
    ty: f64,
    lip: f64,
) -> Result<Vec<f64>, JsError> {
    let mut frame = MotionFrame {
        scale,
        rotation: EulerAngles::new(pitch, yaw, roll),
        translation: [tx, ty, 0.0],
        ..MotionFrame::identity()
    };
    frame.delta[LIP_KEYPOINT][1] = lip;
    let points = apply_motion(&template_canonical(), &frame).map_err(js_err)?;
    Ok(points.iter().flatten().copied().collect())
}

#[derive(Serialize)]
struct SampleView {
    envelope: Vec<f64>,
    lip: Vec<f64>,
    pitch: Vec<f64>,
    yaw: Vec<f64>,
    roll: Vec<f64>,
    diversity: f64,
    smoothness: f64,
    sync_r: f64,
}

/// One synthetic training sequence with its metrics, as JSON.
#[wasm_bindgen]
pub fn synthetic_sample(seed: u64, frames: usize) -> Result<String, JsError> {
    let data = make_synthetic_dataset(1, frames, seed).map_err(js_err)?;
    let s = &data.samples[0];
    let poses = s.motion.poses();
    let view = SampleView {
        envelope: s.envelope.clone(),
        lip: s.motion.channel(LIP_CHANNEL),
        pitch: poses.iter().map(|p| p[0]).collect(),
        yaw: poses.iter().map(|p| p[1]).collect(),
        roll: poses.iter().map(|p| p[2]).collect(),
        diversity: head_diversity(&s.motion).map_err(js_err)?,
        smoothness: smoothness(&s.motion).map_err(js_err)?,
        sync_r: sync_correlation(&s.motion, &s.envelope).map_err(js_err)?.r,
    };
    serde_json::to_string(&view).map_err(|e| JsError::new(&e.to_string()))
}

/// `signal` noised to timestep `t` of the default schedule, followed by
/// `ᾱ_t` as the final element.
#[wasm_bindgen]
pub fn noise_signal(signal: Vec<f64>, t: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let sched = make_schedule(1000, 1e-4, 2e-2).map_err(js_err)?;
    let n = signal.len();
    let z0 = Array2::from_shape_vec((n, 1), signal).map_err(|e| JsError::new(&e.to_string()))?;
    let eps = standard_normal(&mut ChaCha8Rng::seed_from_u64(seed), n, 1);
    let zt = forward_sample(z0.view(), t, eps.view(), &sched).map_err(js_err)?;
    let mut out = zt.into_raw_vec_and_offset().0;
    out.push(sched.alpha_bar(t));
    Ok(out)
}
