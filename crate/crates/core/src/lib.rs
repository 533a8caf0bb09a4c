//! Keypoint-based spatiotemporal diffusion for audio-driven talking-portrait
//! motion.
//!
//! The crate learns to denoise sequences of implicit 3D facial keypoint motion
//! parameters `(s, R, t, δ)` conditioned on per-frame audio features and two
//! reference rows (canonical keypoints and the reference frame's motion), and
//! samples new sequences with deterministic DDIM.

pub mod conditioning;
pub mod denoiser;
pub mod diffusion;
mod error;
pub mod eval;
pub mod io;
pub mod motion;
pub mod optim;
pub mod pipeline;

pub use error::{Error, Result};
