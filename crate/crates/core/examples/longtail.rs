//! Trains on a long-tailed synthetic set with an 8:2 per-class split and
//! compares test macro-F1 against the majority-class baseline.
//!
//! cargo run --release --example longtail -- [seed] [epochs] [counts,comma,separated]

use sckansformer::data::{generate_synthetic, split_dataset, SynthConfig};
use sckansformer::metrics::majority_baseline;
use sckansformer::model::{ModelConfig, SCKansformer};
use sckansformer::rng::substream;
use sckansformer::train::{fit, TrainConfig};

fn main() -> sckansformer::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);
    let counts: Vec<usize> = args
        .next()
        .map(|s| s.split(',').filter_map(|c| c.parse().ok()).collect())
        .unwrap_or_else(|| vec![64, 32, 16, 8]);

    let data = generate_synthetic(&SynthConfig {
        num_classes: counts.len(),
        longtail: Some(counts.clone()),
        seed,
        ..SynthConfig::default()
    })?;
    let (train, test, _) = split_dataset(&data, 0.8, seed)?;
    let model_cfg = ModelConfig {
        num_classes: counts.len(),
        ..ModelConfig::default()
    };
    let mut model = SCKansformer::new(&model_cfg, &mut substream(seed, "init"))?;
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let report = fit(&mut model, &train, Some(&test), &cfg, None)?;
    let last = report.logs.last().expect("at least one epoch");
    let baseline = majority_baseline(&train.labels(), &test.labels(), counts.len())?;
    println!(
        "train {} / test {}: final test macro-F1 {:.3} (best {:.3} at epoch {}), majority baseline {:.3}",
        train.len(),
        test.len(),
        last.eval_f1,
        report.best.macro_f1,
        report.best_epoch,
        baseline.macro_f1
    );
    Ok(())
}
