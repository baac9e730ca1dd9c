//! Overfits the desk configuration on 64 synthetic cell images.
//!
//! cargo run --release --example train_synthetic -- [seed] [epochs]

use std::time::Instant;

use sckansformer::data::{generate_synthetic, SynthConfig};
use sckansformer::model::{ModelConfig, SCKansformer};
use sckansformer::rng::substream;
use sckansformer::train::{fit, TrainConfig};

fn main() -> sckansformer::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);

    let data = generate_synthetic(&SynthConfig {
        samples_per_class: 8,
        seed,
        ..SynthConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs,
        seed,
        target_train_acc: Some(0.95),
        ..TrainConfig::default()
    };
    let mut model = SCKansformer::new(&ModelConfig::default(), &mut substream(seed, "init"))?;
    println!("{} parameters, {} samples", sckansformer::nn::Module::param_count(&model), data.len());

    let start = Instant::now();
    let report = fit(&mut model, &data, None, &cfg, None)?;
    let last = report.logs.last().expect("at least one epoch");
    println!(
        "{} epochs in {:.1}s: train acc {:.3}, loss {:.4}, early stop {}",
        report.logs.len(),
        start.elapsed().as_secs_f64(),
        last.train_acc,
        last.train_loss,
        report.stopped_early
    );
    Ok(())
}
