//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL ...` line to
//! the real stdout so the verdicts are visible without `--nocapture`.

mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use kdiff::conditioning::load_features;
use kdiff::conditioning::{assemble_input, build_reference_rows, AudioFeatureSequence, REFERENCE_ROWS};
use kdiff::denoiser::{rope_rotate, DenoiseBatch, Denoiser, DenoiserConfig};
use kdiff::diffusion::{
    ddim_sample, ddim_timesteps, forward_sample, make_schedule, standard_normal, DiffusionSchedule,
};
use kdiff::eval::{
    head_diversity, run_ablation, smoothness, sync_correlation, AblationSettings, AblationTable, ModelCache, Variant,
};
use kdiff::io::{
    export_driving_keypoints, read_dataset, read_driving_keypoints, read_sequence, write_dataset, write_features,
    write_sequence,
};
use kdiff::motion::{
    apply_motion, delta_index, flatten_frame, rotation_from_euler, unflatten_frame, CanonicalKeypoints, EulerAngles,
    MotionFrame, MotionSequence, LATENT_DIM, NUM_KEYPOINTS,
};
use kdiff::pipeline::{make_synthetic_dataset, masked_loss_and_grad, train, Dataset, TrainConfig, LIP_KEYPOINT};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn verdict(n: u32, pass: bool, detail: String) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n}: {detail}");
}

fn random_frame(rng: &mut ChaCha8Rng) -> MotionFrame {
    MotionFrame {
        scale: rng.gen_range(0.5..2.0),
        rotation: EulerAngles::new(
            rng.gen_range(-179.0..179.0),
            rng.gen_range(-179.0..179.0),
            rng.gen_range(-179.0..179.0),
        ),
        translation: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
        delta: std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-0.2..0.2))),
    }
}

fn random_canonical(rng: &mut ChaCha8Rng) -> CanonicalKeypoints {
    CanonicalKeypoints::new(std::array::from_fn(|_| {
        std::array::from_fn(|_| rng.gen_range(-1.0..1.0))
    }))
    .unwrap()
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v))
}

#[test]
fn criterion_01_exact_math() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xc = random_canonical(&mut rng);
    let mut ok = apply_motion(&xc, &MotionFrame::identity()).unwrap() == xc.points;
    let doubled = MotionFrame {
        scale: 2.0,
        ..MotionFrame::identity()
    };
    ok &= apply_motion(&xc, &doubled)
        .unwrap()
        .iter()
        .zip(&xc.points)
        .all(|(o, p)| *o == [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]);

    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let f = random_frame(&mut rng);
        let xc = random_canonical(&mut rng);
        let out = apply_motion(&xc, &f).unwrap();
        // Elementary rotations in order roll, pitch, yaw on the row vector.
        for (k, p) in xc.points.iter().enumerate() {
            let (sr, cr) = f.rotation.roll.to_radians().sin_cos();
            let a = [p[0] * cr - p[1] * sr, p[0] * sr + p[1] * cr, p[2]];
            let (sp, cp) = f.rotation.pitch.to_radians().sin_cos();
            let b = [a[0], a[1] * cp - a[2] * sp, a[1] * sp + a[2] * cp];
            let (sy, cy) = f.rotation.yaw.to_radians().sin_cos();
            let c = [b[0] * cy + b[2] * sy, b[1], -b[0] * sy + b[2] * cy];
            for j in 0..3 {
                worst = worst.max((out[k][j] - (f.scale * (c[j] + f.delta[k][j]) + f.translation[j])).abs());
            }
        }
        let r = rotation_from_euler(f.rotation).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|m| r[i][m] * r[j][m]).sum();
                worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        ok &= unflatten_frame(&flatten_frame(&f).0).unwrap() == f;
    }
    ok &= delta_index(NUM_KEYPOINTS - 1, 2) == LATENT_DIM - 1;
    let elapsed = start.elapsed();
    verdict(
        1,
        ok && worst < 1e-12 && elapsed < Duration::from_secs(1),
        format!("max deviation {worst:.2e}, {:.3} s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_02_schedule() {
    let sched = DiffusionSchedule::from_betas(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let worst = sched
        .alpha_bars()
        .iter()
        .zip([0.9, 0.72, 0.504, 0.3024])
        .map(|(g, w): (&f64, f64)| ((g - w) / w).abs())
        .fold(0.0f64, f64::max);
    let full = make_schedule(1000, 1e-4, 2e-2).unwrap();
    let monotone = full.len() == 1000
        && full.betas().windows(2).all(|w| w[0] < w[1])
        && full.alpha_bars().windows(2).all(|w| w[0] > w[1])
        && full.alpha_bars().iter().all(|&a| a > 0.0 && a < 1.0);
    verdict(
        2,
        monotone && worst < 1e-12,
        format!("T=4 max rel err {worst:.2e}, monotone {monotone}"),
    );
}

#[test]
fn criterion_03_sampler_oracle() {
    let start = Instant::now();
    let sched = make_schedule(1000, 1e-4, 2e-2).unwrap();
    let mut errs = Vec::new();
    for n_steps in [1, 50] {
        let mut rng = ChaCha8Rng::seed_from_u64(n_steps as u64);
        let z0 = standard_normal(&mut rng, 16, LATENT_DIM);
        let eps = standard_normal(&mut rng, 16, LATENT_DIM);
        let ts = ddim_timesteps(1000, n_steps).unwrap();
        let zt = forward_sample(z0.view(), ts.steps[0], eps.view(), &sched).unwrap();
        let out = ddim_sample(zt, &ts, &sched, |_, _| Ok(eps.clone())).unwrap();
        errs.push(max_abs(&out, &z0));
    }

    let cfg = DenoiserConfig::tiny();
    let mut model = Denoiser::new(cfg.clone(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in model.params_mut() {
        *p = 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    let refs = standard_normal(&mut rng, REFERENCE_ROWS, LATENT_DIM);
    let audio = standard_normal(&mut rng, 16, cfg.audio_dim);
    let run = || {
        let mut noise = ChaCha8Rng::seed_from_u64(99);
        let z = standard_normal(&mut noise, 16, LATENT_DIM);
        ddim_sample(z, &ddim_timesteps(1000, 50).unwrap(), &sched, |zt, t| {
            let input = assemble_input(refs.view(), zt.view())?;
            let out = model.forward(&DenoiseBatch::single(input.rows.view(), audio.view(), t))?;
            Ok(out.slice(s![REFERENCE_ROWS.., ..]).to_owned())
        })
        .unwrap()
    };
    let (a, b) = (run(), run());
    let bitwise = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    let elapsed = start.elapsed();
    verdict(
        3,
        errs.iter().all(|&e| e < 1e-6) && bitwise && elapsed < Duration::from_secs(5),
        format!(
            "1-step err {:.2e}, 50-step err {:.2e}, bit-deterministic {bitwise}, {:.2} s",
            errs[0],
            errs[1],
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_04_gradient_check() {
    let start = Instant::now();
    let report = common::finite_difference_check(DenoiserConfig::tiny(), 4, 2, 17);
    let worst = report.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)).unwrap();
    let live = report.iter().all(|g| g.norm > 0.0);
    let elapsed = start.elapsed();
    verdict(
        4,
        worst.rel_err < 1e-3 && live && elapsed < Duration::from_secs(60),
        format!(
            "{} groups, worst {} at {:.2e}, {:.1} s",
            report.len(),
            worst.name,
            worst.rel_err,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_05_rope() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = standard_normal(&mut rng, 6, 16);
    let k = standard_normal(&mut rng, 6, 16);
    let identity = rope_rotate(q.view(), &[0.0; 6]).unwrap() == q;
    let pos: Vec<f64> = (-2..4).map(f64::from).collect();
    let rq = rope_rotate(q.view(), &pos).unwrap();
    let norm_err = q
        .rows()
        .into_iter()
        .zip(rq.rows())
        .map(|(a, b)| (a.dot(&a).sqrt() - b.dot(&b).sqrt()).abs())
        .fold(0.0f64, f64::max);
    let logits = |p: &[f64]| {
        rope_rotate(q.view(), p)
            .unwrap()
            .dot(&rope_rotate(k.view(), p).unwrap().t())
    };
    let base = logits(&pos);
    let mut shift_err: f64 = 0.0;
    for shift in [-37.0, 1.0, 250.0] {
        let moved: Vec<f64> = pos.iter().map(|p| p + shift).collect();
        shift_err = shift_err.max(max_abs(&logits(&moved), &base));
    }
    verdict(
        5,
        identity && norm_err < 1e-9 && shift_err < 1e-9,
        format!("position-0 identity {identity}, norm err {norm_err:.2e}, shift err {shift_err:.2e}"),
    );
}

#[test]
fn criterion_06_structured_input() {
    let xc = CanonicalKeypoints::new(std::array::from_fn(|i| {
        [100.0 + i as f64, 200.0 + i as f64, 300.0 + i as f64]
    }))
    .unwrap();
    let mut m0 = MotionFrame::identity();
    m0.scale = 7.0;
    m0.delta[3][1] = 9.0;
    let refs = build_reference_rows(&xc, &m0);
    let mut layout = (0..7).all(|c| refs[[0, c]] == 0.0);
    for i in 0..NUM_KEYPOINTS {
        for j in 0..3 {
            layout &= refs[[0, delta_index(i, j)]] == [100.0, 200.0, 300.0][j] + i as f64;
        }
    }
    layout &= refs.row(1).to_vec() == flatten_frame(&m0).0.to_vec();

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let motion = standard_normal(&mut rng, 64, LATENT_DIM);
    let input = assemble_input(refs.view(), motion.view()).unwrap();
    let rows_ok = input.rows.nrows() == 66 && input.motion() == motion && input.references() == refs;

    let target = standard_normal(&mut rng, 64, LATENT_DIM);
    let mut out = standard_normal(&mut rng, 66, LATENT_DIM);
    let (loss, grad) = masked_loss_and_grad(out.view(), target.view(), 66).unwrap();
    out.slice_mut(s![..2, ..]).fill(1e6);
    let (loss2, _) = masked_loss_and_grad(out.view(), target.view(), 66).unwrap();
    let masked = loss == loss2 && grad.slice(s![..2, ..]).iter().all(|&g| g == 0.0);
    verdict(
        6,
        layout && rows_ok && masked,
        format!("sentinel layout {layout}, 66-row input {rows_ok}, reference rows masked {masked}"),
    );
}

struct Shared {
    data: Dataset,
    held_out: Dataset,
    cache: ModelCache,
    losses: Option<Vec<f64>>,
    train_time: Duration,
}

fn settings() -> AblationSettings {
    AblationSettings {
        train: TrainConfig::toy(),
        sampling_steps: 50,
        seed: 0,
        fps_repeats: 0,
    }
}

/// Toy data, 20 held-out samples and the trained full model with its loss
/// curve. Variant models trained later land in the same cache.
fn shared() -> MutexGuard<'static, Shared> {
    static CELL: OnceLock<Mutex<Shared>> = OnceLock::new();
    let cell = CELL.get_or_init(|| {
        Mutex::new(Shared {
            data: make_synthetic_dataset(200, 16, 0).unwrap(),
            held_out: make_synthetic_dataset(20, 16, 1000).unwrap(),
            cache: ModelCache::default(),
            losses: None,
            train_time: Duration::ZERO,
        })
    });
    let mut guard = cell.lock().unwrap_or_else(|e| e.into_inner());
    if guard.losses.is_none() {
        let cfg = settings().train;
        let start = Instant::now();
        let out = train(&guard.data, &cfg).unwrap();
        guard.train_time = start.elapsed();
        guard.cache.insert(cfg, out.model);
        guard.losses = Some(out.losses);
    }
    guard
}

fn ablate(variants: &[Variant]) -> AblationTable {
    let mut g = shared();
    let Shared {
        data, held_out, cache, ..
    } = &mut *g;
    run_ablation(data, &held_out.samples, &settings(), variants, cache).unwrap()
}

fn sync(table: &AblationTable, v: Variant) -> f64 {
    table.get(v).unwrap().sync_r
}

#[test]
fn criterion_07_toy_learning() {
    let table = ablate(&[Variant::Full]);
    let (losses, minutes) = {
        let g = shared();
        (g.losses.clone().unwrap(), g.train_time.as_secs_f64() / 60.0)
    };
    // Batch losses are noisy, so both ends are averaged over 100 steps.
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (initial, last) = (mean(&losses[..100]), mean(&losses[losses.len() - 100..]));
    let r = sync(&table, Variant::Full);
    let steps = settings().train.total_steps;
    verdict(
        7,
        r > 0.5 && last < 0.5 * initial && steps <= 10_000 && minutes <= 30.0,
        format!("held-out sync_r {r:.4}, loss {initial:.4} -> {last:.4}, {steps} steps in {minutes:.1} min"),
    );
}

#[test]
fn criterion_08_directional_ablations() {
    let table = ablate(&[
        Variant::Full,
        Variant::NoRope,
        Variant::NoAttention,
        Variant::NoReferenceRow,
    ]);
    let (full, no_rope, no_attn, no_ref) = (
        sync(&table, Variant::Full),
        sync(&table, Variant::NoRope),
        sync(&table, Variant::NoAttention),
        sync(&table, Variant::NoReferenceRow),
    );
    let ordering = full > no_rope && no_rope > no_attn;
    let reference = no_ref < full;
    verdict(
        8,
        ordering && reference,
        format!(
            "full {full:.4} > no_rope {no_rope:.4} > no_attention {no_attn:.4}: {ordering}; \
             no_reference_row {no_ref:.4} < full: {reference}"
        ),
    );
}

#[test]
fn criterion_09_step_sweep() {
    let table = ablate(&[Variant::Steps(1), Variant::Steps(5), Variant::Steps(50)]);
    let (s1, s5, s50) = (
        sync(&table, Variant::Steps(1)),
        sync(&table, Variant::Steps(5)),
        sync(&table, Variant::Steps(50)),
    );
    // "Markedly worse" is read as at least 0.2 lower in correlation.
    let marked = s5 - s1 >= 0.2;
    let close = (s5 - s50).abs() <= 0.15 * s50.abs().max(s5.abs());
    verdict(
        9,
        marked && close,
        format!("steps=1 {s1:.4}, steps=5 {s5:.4}, steps=50 {s50:.4}"),
    );
}

fn pose_seq(poses: &[[f64; 3]]) -> MotionSequence {
    MotionSequence::new(
        poses
            .iter()
            .map(|p| MotionFrame {
                rotation: EulerAngles::new(p[0], p[1], p[2]),
                ..MotionFrame::identity()
            })
            .collect(),
    )
}

#[test]
fn criterion_10_metrics_arithmetic() {
    let alt: Vec<[f64; 3]> = (0..64)
        .map(|k| [0.0, if k % 2 == 0 { 1.0 } else { -1.0 }, 0.0])
        .collect();
    let diversity = head_diversity(&pose_seq(&alt)).unwrap();
    let ramp: Vec<[f64; 3]> = (0..32).map(|k| [0.5 * k as f64, 3.0 - 2.0 * k as f64, 7.0]).collect();
    let smooth = smoothness(&pose_seq(&ramp)).unwrap();

    let env: Vec<f64> = (0..40).map(|k| (k as f64 * 0.3).sin() + 0.05 * k as f64).collect();
    let lip_seq = |vals: &[f64]| {
        MotionSequence::new(
            vals.iter()
                .map(|&v| {
                    let mut f = MotionFrame::identity();
                    f.delta[LIP_KEYPOINT][1] = v;
                    f
                })
                .collect(),
        )
    };
    let lip: Vec<f64> = (0..40)
        .map(|k| (k as f64 * 0.3).cos() + 0.2 * (k as f64 * 1.7).sin())
        .collect();
    let r = sync_correlation(&lip_seq(&lip), &env).unwrap().r;
    let mut affine_err: f64 = 0.0;
    for (a, b) in [(0.01, 5.0), (3.0, -2.0), (250.0, 0.0)] {
        let scaled: Vec<f64> = lip.iter().map(|x| a * x + b).collect();
        affine_err = affine_err.max((sync_correlation(&lip_seq(&scaled), &env).unwrap().r - r).abs());
    }
    verdict(
        10,
        diversity == 1.0 / 3.0 && smooth == 0.0 && affine_err < 1e-9,
        format!("alternating diversity {diversity}, ramp smoothness {smooth}, affine sync err {affine_err:.2e}"),
    );
}

fn cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_kdiff"))
        .current_dir(dir)
        .env_remove("KDIFF_SEED")
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

#[test]
fn criterion_11_io() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xc = random_canonical(&mut rng);
    let seq = MotionSequence::new((0..12).map(|_| random_frame(&mut rng)).collect());

    write_sequence(&dir.join("seq.txt"), &xc, &seq).unwrap();
    let mut roundtrips = read_sequence(&dir.join("seq.txt")).unwrap() == (xc, seq.clone());
    let feats = AudioFeatureSequence::new(standard_normal(&mut rng, 9, 5)).unwrap();
    write_features(&dir.join("f.txt"), &feats).unwrap();
    roundtrips &= load_features(&dir.join("f.txt")).unwrap() == feats;
    let data = make_synthetic_dataset(3, 8, 4).unwrap();
    write_dataset(&dir.join("d.json"), &data).unwrap();
    roundtrips &= read_dataset(&dir.join("d.json")).unwrap() == data;

    export_driving_keypoints(&dir.join("drive.txt"), &xc, &seq).unwrap();
    let exported = read_driving_keypoints(&dir.join("drive.txt")).unwrap();
    let export_ok = exported.len() == seq.len()
        && exported
            .iter()
            .zip(&seq.frames)
            .all(|(got, f)| *got == apply_motion(&xc, f).unwrap());

    let cfg = TrainConfig {
        window: 8,
        batch_size: 4,
        total_steps: 4,
        warmup_steps: 1,
        model: DenoiserConfig::tiny(),
        ..TrainConfig::default()
    };
    fs::write(dir.join("cfg.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    let mut cli_ok = cli(
        dir,
        &[
            "make-data",
            "--out",
            "data.json",
            "--sequences",
            "6",
            "--audio-dim",
            "4",
        ],
    );
    for (ck, out) in [("a", "a.txt"), ("b", "b.txt")] {
        cli_ok &= cli(
            dir,
            &[
                "--seed",
                "7",
                "--config",
                "cfg.json",
                "train",
                "--data",
                "data.json",
                "--out",
                ck,
            ],
        );
        cli_ok &= cli(
            dir,
            &[
                "--seed",
                "7",
                "sample",
                "--checkpoint",
                ck,
                "--data",
                "data.json",
                "--out",
                out,
            ],
        );
    }
    let same = |a: &str, b: &str| {
        fs::read(dir.join(a))
            .ok()
            .is_some_and(|x| Some(x) == fs::read(dir.join(b)).ok())
    };
    let deterministic = cli_ok
        && same("a/params.bin", "b/params.bin")
        && same("a/manifest.json", "b/manifest.json")
        && same("a.txt", "b.txt");
    verdict(
        11,
        roundtrips && export_ok && deterministic,
        format!("roundtrips {roundtrips}, export matches oracle {export_ok}, CLI deterministic {deterministic}"),
    );
}
