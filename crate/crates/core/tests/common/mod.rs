//! Oracles shared by the integration test targets. Nothing here calls into the
//! code paths being checked except through their public entry points.
#![allow(dead_code)]

use kdiff::denoiser::{DenoiseBatch, Denoiser, DenoiserConfig};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Masked noise-prediction loss over the motion rows, computed by explicit loops.
pub fn masked_loss(out: &Array2<f64>, target: &Array2<f64>, seq_len: usize) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for r in 0..out.nrows() {
        if r % seq_len < 2 {
            continue;
        }
        let tr = (r / seq_len) * (seq_len - 2) + r % seq_len - 2;
        for c in 0..out.ncols() {
            acc += (out[[r, c]] - target[[tr, c]]).powi(2);
            count += 1;
        }
    }
    acc / count as f64
}

pub struct GroupCheck {
    pub name: String,
    pub rel_err: f64,
    pub norm: f64,
}

/// Compares analytic gradients against central differences for every
/// parameter group of `model` on a random batch.
pub fn finite_difference_check(cfg: DenoiserConfig, n: usize, batch: usize, seed: u64) -> Vec<GroupCheck> {
    let mut model = Denoiser::new(cfg.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    // Randomize every tensor, including the zero-initialized ones.
    for p in model.params_mut() {
        *p = 0.3 * rng.sample::<f64, _>(StandardNormal);
    }
    let seq_len = n + 2;
    let input = normal(&mut rng, batch * seq_len, cfg.latent_dim);
    let audio = normal(&mut rng, batch * n, cfg.audio_dim);
    let target = normal(&mut rng, batch * n, cfg.latent_dim);
    let timesteps: Vec<usize> = (0..batch).map(|_| rng.gen_range(1..=1000)).collect();
    let data = DenoiseBatch {
        inputs: input,
        audio,
        timesteps,
        seq_len,
    };

    let (out, cache) = model.forward_train(&data).unwrap();
    let count = (batch * n * cfg.latent_dim) as f64;
    let mut d_out = Array2::zeros(out.dim());
    for b in 0..batch {
        let o = out.slice(s![b * seq_len + 2..(b + 1) * seq_len, ..]);
        let t = data_target_rows(&target, b, n);
        d_out
            .slice_mut(s![b * seq_len + 2..(b + 1) * seq_len, ..])
            .assign(&((&o - &t) * (2.0 / count)));
    }
    let analytic = model.backward(&cache, d_out.view());

    let h = 1e-5;
    let groups = model.layout().groups.clone();
    let mut report = Vec::new();
    for g in groups {
        let mut num = Vec::with_capacity(g.slot.len());
        for idx in g.slot.range() {
            let orig = model.params()[idx];
            model.params_mut()[idx] = orig + h;
            let lp = masked_loss(&model.forward(&data).unwrap(), &target, seq_len);
            model.params_mut()[idx] = orig - h;
            let lm = masked_loss(&model.forward(&data).unwrap(), &target, seq_len);
            model.params_mut()[idx] = orig;
            num.push((lp - lm) / (2.0 * h));
        }
        let ana = &analytic[g.slot.range()];
        let diff: f64 = ana.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = ana.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
        report.push(GroupCheck {
            name: g.name.clone(),
            rel_err: diff / na.max(nn).max(1e-300),
            norm: nn,
        });
    }
    report
}

fn data_target_rows(target: &Array2<f64>, b: usize, n: usize) -> Array2<f64> {
    target.slice(s![b * n..(b + 1) * n, ..]).to_owned()
}
