//! Noise schedule, closed-form forward noising, the noise-prediction loss and
//! DDIM reverse steps.
//!
//! Timesteps are 1-based: `t ∈ [1, T]`, with `t = 0` standing for the clean
//! latent (`ᾱ_0 = 1`).

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;
pub const DEFAULT_SAMPLING_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_TRAIN_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Linearly spaced betas from `beta_start` to `beta_end` over `steps` steps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return invalid("schedule needs at least one step");
    }
    if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
        return invalid(format!(
            "need 0 < beta_start < beta_end < 1, got {beta_start} and {beta_end}"
        ));
    }
    let betas = if steps == 1 {
        vec![beta_start]
    } else {
        let span = beta_end - beta_start;
        (0..steps)
            .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
            .collect()
    };
    DiffusionSchedule::from_betas(betas)
}

impl DiffusionSchedule {
    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self> {
        make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end)
    }

    /// Builds a schedule from an explicit strictly increasing beta table.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return invalid("empty beta table");
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return invalid("betas must lie in (0, 1)");
        }
        if betas.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("betas must be strictly increasing");
        }
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `β_t` for `t ∈ [1, T]`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return invalid(format!("timestep {t} outside [1, {}]", self.len()));
        }
        Ok(())
    }
}

fn check_same_shape(a: &ArrayView2<f64>, b: &ArrayView2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return invalid(format!("{what}: shape {:?} vs {:?}", a.dim(), b.dim()));
    }
    Ok(())
}

/// `z_t = √ᾱ_t · z_0 + √(1−ᾱ_t) · ε`.
pub fn forward_sample(
    z0: ArrayView2<f64>,
    t: usize,
    eps: ArrayView2<f64>,
    sched: &DiffusionSchedule,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    check_same_shape(&z0, &eps, "forward_sample")?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(&z0).and(&eps).map_collect(|&z, &e| a * z + b * e))
}

/// Mean squared error over every element.
pub fn training_loss(eps_hat: ArrayView2<f64>, eps: ArrayView2<f64>) -> Result<f64> {
    check_same_shape(&eps_hat, &eps, "training_loss")?;
    if eps.is_empty() {
        return invalid("training_loss on empty arrays");
    }
    let sum: f64 = Zip::from(&eps_hat)
        .and(&eps)
        .fold(0.0, |acc, &p, &e| acc + (p - e) * (p - e));
    Ok(sum / eps.len() as f64)
}

/// Uniformly strided decreasing timesteps ending at 1, e.g. `[981, 961, …, 1]`
/// for `T = 1000` and 50 steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepSubsequence {
    pub steps: Vec<usize>,
}

pub fn ddim_timesteps(total: usize, n_steps: usize) -> Result<TimestepSubsequence> {
    if n_steps == 0 || n_steps > total {
        return invalid(format!("sampling steps must be in [1, {total}], got {n_steps}"));
    }
    let stride = total / n_steps;
    Ok(TimestepSubsequence {
        steps: (0..n_steps).rev().map(|k| 1 + k * stride).collect(),
    })
}

/// Deterministic DDIM update from `t` to `t_prev` (`σ_t = 0`).
pub fn ddim_step(
    z_t: ArrayView2<f64>,
    eps_hat: ArrayView2<f64>,
    t: usize,
    t_prev: usize,
    sched: &DiffusionSchedule,
) -> Result<Array2<f64>> {
    ddim_step_eta(z_t, eps_hat, t, t_prev, sched, 0.0, None)
}

/// Generalized DDIM update with stochasticity `eta` (0 = deterministic,
/// 1 = DDPM-like ancestral noise). `noise` is required when `eta > 0`.
pub fn ddim_step_eta(
    z_t: ArrayView2<f64>,
    eps_hat: ArrayView2<f64>,
    t: usize,
    t_prev: usize,
    sched: &DiffusionSchedule,
    eta: f64,
    noise: Option<ArrayView2<f64>>,
) -> Result<Array2<f64>> {
    if t <= t_prev {
        return invalid(format!("ddim_step needs t > t_prev, got {t} and {t_prev}"));
    }
    sched.check_step(t)?;
    check_same_shape(&z_t, &eps_hat, "ddim_step")?;
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let sigma = if eta > 0.0 {
        eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt()
    } else {
        0.0
    };
    let (sa_t, sb_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let sa_prev = ab_prev.sqrt();
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let mut out = Zip::from(&z_t).and(&eps_hat).map_collect(|&z, &e| {
        let z0_hat = (z - sb_t * e) / sa_t;
        sa_prev * z0_hat + dir * e
    });
    if sigma > 0.0 {
        let Some(noise) = noise else {
            return invalid("stochastic step requires a noise sample");
        };
        check_same_shape(&z_t, &noise, "ddim_step noise")?;
        out.zip_mut_with(&noise, |o, &n| *o += sigma * n);
    }
    Ok(out)
}

/// Predicted clean latent `ẑ_0 = (z_t − √(1−ᾱ_t) ε̂) / √ᾱ_t`.
pub fn predict_z0(
    z_t: ArrayView2<f64>,
    eps_hat: ArrayView2<f64>,
    t: usize,
    sched: &DiffusionSchedule,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    check_same_shape(&z_t, &eps_hat, "predict_z0")?;
    let ab = sched.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(&z_t).and(&eps_hat).map_collect(|&z, &e| (z - sb * e) / sa))
}

/// Runs the deterministic DDIM chain from `z_start`, treated as a sample at the
/// first timestep of `steps`. `denoise` receives the current latent and timestep
/// and returns the predicted noise.
pub fn ddim_sample<F>(
    z_start: Array2<f64>,
    steps: &TimestepSubsequence,
    sched: &DiffusionSchedule,
    mut denoise: F,
) -> Result<Array2<f64>>
where
    F: FnMut(ArrayView2<f64>, usize) -> Result<Array2<f64>>,
{
    let mut z = z_start;
    for (i, &t) in steps.steps.iter().enumerate() {
        let t_prev = steps.steps.get(i + 1).copied().unwrap_or(0);
        let eps_hat = denoise(z.view(), t)?;
        z = ddim_step(z.view(), eps_hat.view(), t, t_prev, sched)?;
    }
    Ok(z)
}

pub fn standard_normal<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}
