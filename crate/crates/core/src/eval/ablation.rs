use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, fps_benchmark, sequence_metrics, EvalReport};
use crate::denoiser::AttentionMode;
use crate::error::{invalid, Error, Result};
use crate::pipeline::{chunked_generate, train, Dataset, SyntheticSample, TrainConfig, TrainedModel};

pub const FRAME_SWEEP: [usize; 4] = [8, 16, 32, 64];
pub const STEP_SWEEP: [usize; 7] = [1, 5, 10, 20, 50, 100, 200];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    NoReferenceRow,
    NoAttention,
    NoRope,
    /// Training/generation window length.
    Frames(usize),
    /// DDIM sampling steps with the full model.
    Steps(usize),
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => write!(f, "full"),
            Variant::NoReferenceRow => write!(f, "no_reference_row"),
            Variant::NoAttention => write!(f, "no_attention"),
            Variant::NoRope => write!(f, "no_rope"),
            Variant::Frames(n) => write!(f, "n={n}"),
            Variant::Steps(s) => write!(f, "steps={s}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || {
            Error::InvalidArgument(format!(
                "unknown variant `{s}`; expected full, no_reference_row, no_attention, no_rope, \
                 n=<8|16|32|64> or steps=<1|5|10|20|50|100|200>"
            ))
        };
        match s {
            "full" => return Ok(Variant::Full),
            "no_reference_row" => return Ok(Variant::NoReferenceRow),
            "no_attention" => return Ok(Variant::NoAttention),
            "no_rope" => return Ok(Variant::NoRope),
            _ => {}
        }
        let (key, value) = s.split_once('=').ok_or_else(unknown)?;
        let v: usize = value.parse().map_err(|_| unknown())?;
        match key {
            "n" if FRAME_SWEEP.contains(&v) => Ok(Variant::Frames(v)),
            "steps" if STEP_SWEEP.contains(&v) => Ok(Variant::Steps(v)),
            _ => Err(unknown()),
        }
    }
}

impl Variant {
    /// Training configuration this variant needs.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match *self {
            Variant::Full | Variant::Steps(_) => {}
            Variant::NoReferenceRow => cfg.drop_canonical_row = true,
            Variant::NoAttention => cfg.model.attention = AttentionMode::Off,
            Variant::NoRope => cfg.model.attention = AttentionMode::NoRope,
            Variant::Frames(n) => cfg.window = n,
        }
        cfg
    }

    pub fn sampling_steps(&self, default: usize) -> usize {
        match *self {
            Variant::Steps(s) => s,
            _ => default,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSettings {
    pub train: TrainConfig,
    pub sampling_steps: usize,
    pub seed: u64,
    /// Timed runs for the FPS column; 0 skips the benchmark.
    pub fps_repeats: usize,
}

/// Trained models keyed by their training configuration.
#[derive(Default)]
pub struct ModelCache {
    entries: Vec<(TrainConfig, TrainedModel)>,
}

impl ModelCache {
    pub fn insert(&mut self, config: TrainConfig, model: TrainedModel) {
        self.entries.retain(|(c, _)| *c != config);
        self.entries.push((config, model));
    }

    pub fn get(&self, config: &TrainConfig) -> Option<&TrainedModel> {
        self.entries.iter().find(|(c, _)| c == config).map(|(_, m)| m)
    }

    fn get_or_train(&mut self, data: &Dataset, config: &TrainConfig) -> Result<&TrainedModel> {
        if self.get(config).is_none() {
            log::info!("training variant model ({} steps)", config.total_steps);
            let out = train(data, config)?;
            self.entries.push((config.clone(), out.model));
        }
        Ok(self.get(config).expect("just inserted"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, variant: Variant) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| &r.report)
    }

    /// Tab-separated table with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tdiversity\tsmoothness\tsync_r\tfps\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.3}\n",
                r.variant, r.report.diversity, r.report.smoothness, r.report.sync_r, r.report.fps
            ));
        }
        out
    }
}

fn evaluate_windowed(
    model: &TrainedModel,
    held_out: &[SyntheticSample],
    steps: usize,
    seed: u64,
) -> Result<EvalReport> {
    if held_out.iter().all(|s| s.audio.len() <= model.window) {
        return evaluate(model, held_out, steps, seed);
    }
    let per = held_out
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let seq = chunked_generate(
                model,
                &s.canonical,
                &s.motion0,
                &s.audio,
                steps,
                crate::pipeline::mix_seed(seed, i as u64),
            )?;
            sequence_metrics(&seq, &s.envelope)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_sequences(per, 0.0))
}

/// Trains (or reuses from `cache`) one model per variant with identical
/// seeds and evaluates each on `held_out`.
pub fn run_ablation(
    data: &Dataset,
    held_out: &[SyntheticSample],
    settings: &AblationSettings,
    variants: &[Variant],
    cache: &mut ModelCache,
) -> Result<AblationTable> {
    if held_out.is_empty() {
        return invalid("ablation needs at least one held-out sample");
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let cfg = variant.train_config(&settings.train);
        let steps = variant.sampling_steps(settings.sampling_steps);
        let model = cache.get_or_train(data, &cfg)?;
        let mut report = evaluate_windowed(model, held_out, steps, settings.seed)?;
        if settings.fps_repeats > 0 {
            report.fps = fps_benchmark(model, model.window, steps, settings.fps_repeats)?;
        }
        log::info!(
            "{variant}: sync_r {:.4} diversity {:.4}",
            report.sync_r,
            report.diversity
        );
        rows.push(AblationRow { variant, report });
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_roundtrip() {
        let all = [
            "full",
            "no_reference_row",
            "no_attention",
            "no_rope",
            "n=8",
            "n=64",
            "steps=1",
            "steps=200",
        ];
        for name in all {
            assert_eq!(name.parse::<Variant>().unwrap().to_string(), name);
        }
        for bad in ["no_audio", "n=12", "steps=3", "steps=x", ""] {
            assert!(
                matches!(bad.parse::<Variant>(), Err(Error::InvalidArgument(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn variant_configs_differ_only_in_ablated_field() {
        let base = TrainConfig::toy();
        assert_eq!(Variant::Full.train_config(&base), base);
        assert_eq!(Variant::Steps(5).train_config(&base), base);
        let no_rope = Variant::NoRope.train_config(&base);
        assert_eq!(
            TrainConfig {
                model: base.model.clone(),
                ..no_rope.clone()
            },
            base
        );
        assert_eq!(no_rope.model.attention, AttentionMode::NoRope);
        assert!(Variant::NoReferenceRow.train_config(&base).drop_canonical_row);
        assert_eq!(Variant::Frames(32).train_config(&base).window, 32);
    }
}
