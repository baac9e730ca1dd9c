//! Trains the four ablation variants briefly on synthetic data and prints
//! the score table.
//!
//! cargo run --release --example ablation -- [epochs]

use sckansformer::cli::{ablate_run, DataConfig, RunConfig};
use sckansformer::data::SynthConfig;
use sckansformer::train::TrainConfig;

fn main() -> sckansformer::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let cfg = RunConfig {
        train: TrainConfig {
            epochs,
            ..TrainConfig::default()
        },
        data: DataConfig {
            synthetic: Some(SynthConfig {
                samples_per_class: 16,
                ..SynthConfig::default()
            }),
            ..DataConfig::default()
        },
        output_dir: "runs/ablation_example".into(),
        ..RunConfig::default()
    };
    let table = ablate_run(&cfg)?;
    print!("{}", table.to_csv());
    Ok(())
}
