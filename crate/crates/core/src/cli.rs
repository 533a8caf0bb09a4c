use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use kdiff::conditioning::{load_features, mel_features, AudioFeatureSequence};
use kdiff::eval::{fps_benchmark, run_ablation, sequence_metrics, AblationSettings, EvalReport, ModelCache, Variant};
use kdiff::io::{
    emit_plot_frames, export_driving_keypoints, load_checkpoint, read_dataset, read_sequence, read_wav,
    save_checkpoint, write_dataset, write_sequence,
};
use kdiff::motion::{CanonicalKeypoints, MotionFrame};
use kdiff::pipeline::{
    chunked_generate, make_synthetic_dataset_with, mix_seed, template_canonical, train, Dataset, SyntheticConfig,
    TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "kdiff", version, about = "Audio-driven keypoint motion diffusion")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Random seed.
    #[arg(long, global = true, env = "KDIFF_SEED", default_value_t = 0)]
    pub seed: u64,
    /// JSON training configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// DDIM sampling steps.
    #[arg(long, global = true, default_value_t = 50)]
    pub steps: usize,
    /// Frames per sequence (dataset length, training window, generated length).
    #[arg(long, global = true, default_value_t = 64)]
    pub frames: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    MakeData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        sequences: usize,
        #[arg(long, default_value_t = 16)]
        audio_dim: usize,
    },
    /// Train a model and write a checkpoint directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optimizer steps; overrides the configuration.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Generate a motion sequence from audio.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        audio: AudioSource,
        /// Sample index when reading audio from a dataset.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Motion file whose canonical keypoints and first frame seed the generation.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Score motion files, or a checkpoint on a dataset.
    Eval {
        /// Motion sequence files to score.
        #[arg(long = "input", num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, requires = "data")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Timed runs for the FPS figure.
        #[arg(long, default_value_t = 3)]
        fps_repeats: usize,
        #[arg(long)]
        json: bool,
    },
    /// Train and compare ablation variants.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Held-out dataset; generated from the seed when absent.
        #[arg(long)]
        held_out: Option<PathBuf>,
        /// Comma-separated variants, e.g. full,no_rope,steps=5.
        #[arg(long, default_value = "full,no_reference_row,no_attention,no_rope")]
        variants: String,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        fps_repeats: usize,
    },
    /// Write per-frame driving keypoints for an external renderer.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render per-frame keypoint scatter plots.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct AudioSource {
    /// Feature file.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Mono 16 kHz WAV file.
    #[arg(long)]
    wav: Option<PathBuf>,
    /// Sample `index` of a dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn train_config(g: &Global, iterations: Option<usize>) -> anyhow::Result<TrainConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("{}", path.display()))?
        }
        None => TrainConfig {
            window: g.frames,
            ..TrainConfig::default()
        },
    };
    cfg.seed = g.seed;
    if let Some(n) = iterations {
        cfg.total_steps = n;
    }
    Ok(cfg)
}

fn dataset_sample(path: &Path, index: usize) -> anyhow::Result<(Dataset, usize)> {
    let data = read_dataset(path)?;
    if index >= data.len() {
        bail!("sample index {index} out of range for {} samples", data.len());
    }
    Ok((data, index))
}

fn truncate(audio: AudioFeatureSequence, frames: usize) -> anyhow::Result<AudioFeatureSequence> {
    if audio.len() < frames {
        bail!("audio has {} frames, {frames} requested", audio.len());
    }
    Ok(audio.window(0, frames)?)
}

pub fn run(cli: Cli) -> anyhow::Result<String> {
    let g = &cli.global;
    match cli.command {
        Command::MakeData {
            out,
            sequences,
            audio_dim,
        } => {
            let config = SyntheticConfig {
                audio_dim,
                ..SyntheticConfig::default()
            };
            let data = make_synthetic_dataset_with(config, sequences, g.frames, g.seed)?;
            write_dataset(&out, &data)?;
            Ok(format!(
                "wrote {sequences} sequences of {} frames to {}",
                g.frames,
                out.display()
            ))
        }
        Command::Train { data, out, iterations } => {
            let cfg = train_config(g, iterations)?;
            let data = read_dataset(&data)?;
            let outcome = train(&data, &cfg)?;
            save_checkpoint(&out, &outcome.model)?;
            let first = outcome.losses.first().copied().unwrap_or(f64::NAN);
            let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
            Ok(format!(
                "trained {} steps (loss {first:.4} -> {last:.4}); checkpoint {}",
                cfg.total_steps,
                out.display()
            ))
        }
        Command::Sample {
            checkpoint,
            out,
            audio,
            index,
            reference,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let (mut canonical, mut motion0) = (template_canonical(), MotionFrame::identity());
            let features = if let Some(path) = &audio.features {
                load_features(path)?
            } else if let Some(path) = &audio.wav {
                mel_features(&read_wav(path)?, g.frames)?
            } else {
                let path = audio.data.as_ref().expect("clap enforces one audio source");
                let (data, i) = dataset_sample(path, index)?;
                let s = &data.samples[i];
                canonical = s.canonical;
                motion0 = s.motion0;
                s.audio.clone()
            };
            if let Some(path) = &reference {
                let (xc, seq): (CanonicalKeypoints, _) = read_sequence(path)?;
                canonical = xc;
                motion0 = *seq
                    .frames
                    .first()
                    .with_context(|| format!("{}: reference has no frames", path.display()))?;
            }
            let features = truncate(features, g.frames)?;
            let seq = chunked_generate(&model, &canonical, &motion0, &features, g.steps, g.seed)?;
            write_sequence(&out, &canonical, &seq)?;
            Ok(format!("wrote {} frames to {}", seq.len(), out.display()))
        }
        Command::Eval {
            inputs,
            checkpoint,
            data,
            fps_repeats,
            json,
        } => {
            let mut per = Vec::new();
            for path in &inputs {
                let (_, seq) = read_sequence(path)?;
                per.push(sequence_metrics(&seq, &[])?);
            }
            let mut fps = 0.0;
            if let Some(dir) = &checkpoint {
                let model = load_checkpoint(dir)?;
                let data = read_dataset(data.as_ref().expect("clap enforces --data"))?;
                for (i, s) in data.samples.iter().enumerate() {
                    let n = g.frames.min(s.audio.len());
                    let seq = chunked_generate(
                        &model,
                        &s.canonical,
                        &s.motion0,
                        &s.audio.window(0, n)?,
                        g.steps,
                        mix_seed(g.seed, i as u64),
                    )?;
                    per.push(sequence_metrics(&seq, &s.envelope[..n])?);
                }
                if fps_repeats > 0 {
                    fps = fps_benchmark(&model, g.frames.min(model.window), g.steps, fps_repeats)?;
                }
            }
            if per.is_empty() {
                bail!("nothing to evaluate; pass --input files or --checkpoint with --data");
            }
            let report = EvalReport::from_sequences(per, fps);
            Ok(if json { report.to_json()? } else { report.to_text() })
        }
        Command::Ablate {
            data,
            held_out,
            variants,
            iterations,
            out,
            fps_repeats,
        } => {
            let variants = variants
                .split(',')
                .map(|v| v.trim().parse::<Variant>())
                .collect::<kdiff::Result<Vec<_>>>()?;
            let data = read_dataset(&data)?;
            let held = match &held_out {
                Some(path) => read_dataset(path)?,
                None => {
                    let n = data.samples.first().map_or(g.frames, |s| s.audio.len());
                    make_synthetic_dataset_with(data.config, 20, n, g.seed + 1000)?
                }
            };
            let mut train = train_config(g, iterations)?;
            if g.config.is_none() {
                train.window = train
                    .window
                    .min(data.samples.first().map_or(train.window, |s| s.audio.len()));
            }
            let settings = AblationSettings {
                train,
                sampling_steps: g.steps,
                seed: g.seed,
                fps_repeats,
            };
            let table = run_ablation(&data, &held.samples, &settings, &variants, &mut ModelCache::default())?;
            let tsv = table.to_tsv();
            if let Some(path) = &out {
                fs::write(path, &tsv).with_context(|| format!("{}", path.display()))?;
            }
            Ok(tsv)
        }
        Command::Export { input, out } => {
            let (canonical, seq) = read_sequence(&input)?;
            export_driving_keypoints(&out, &canonical, &seq)?;
            Ok(format!(
                "wrote {} frames of driving keypoints to {}",
                seq.len(),
                out.display()
            ))
        }
        Command::Plot { input, out_dir } => {
            let (canonical, seq) = read_sequence(&input)?;
            let files = emit_plot_frames(&seq, &canonical, &out_dir)?;
            Ok(format!("wrote {} images to {}", files.len(), out_dir.display()))
        }
    }
}
