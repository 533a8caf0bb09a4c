//! Trains the toy model and its ablations on synthetic data and prints the
//! comparison table.
//!
//!     cargo run --release -p kdiff --example toy_ablation -- [steps] [seed]

use std::time::Instant;

use kdiff::eval::{run_ablation, AblationSettings, ModelCache, Variant};
use kdiff::pipeline::{make_synthetic_dataset, TrainConfig};

fn main() -> kdiff::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let variants: Vec<Variant> = match args.get(3) {
        Some(list) => list.split(',').map(str::parse).collect::<kdiff::Result<_>>()?,
        None => vec![
            Variant::Full,
            Variant::NoRope,
            Variant::NoAttention,
            Variant::NoReferenceRow,
            Variant::Steps(1),
            Variant::Steps(5),
        ],
    };

    let train_set = make_synthetic_dataset(200, 16, seed)?;
    let held_out = make_synthetic_dataset(20, 16, seed + 1000)?;
    let settings = AblationSettings {
        train: TrainConfig {
            total_steps: steps,
            seed,
            ..TrainConfig::toy()
        },
        sampling_steps: 50,
        seed,
        fps_repeats: 3,
    };
    let start = Instant::now();
    let table = run_ablation(
        &train_set,
        &held_out.samples,
        &settings,
        &variants,
        &mut ModelCache::default(),
    )?;
    print!("{}", table.to_tsv());
    eprintln!("elapsed {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
