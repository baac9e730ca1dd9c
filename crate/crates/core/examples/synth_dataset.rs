//! Generates a long-tailed synthetic cell dataset, writes it as one folder
//! per class, reloads it and splits it 8:2 per class.
//!
//! cargo run --example synth_dataset -- [out_dir]

use sckansformer::data::{generate_synthetic, load_folder_dataset, split_dataset, write_folder_dataset, SynthConfig};

fn main() -> sckansformer::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/synth_example".into());
    let data = generate_synthetic(&SynthConfig {
        num_classes: 4,
        longtail: Some(vec![64, 32, 16, 8]),
        ..SynthConfig::default()
    })?;
    write_folder_dataset(&data, out.as_ref())?;
    let (loaded, report) = load_folder_dataset(out.as_ref())?;
    println!("{report:?}");
    println!("classes {:?}, counts {:?}", loaded.class_names, loaded.class_counts());

    let (train, test, _) = split_dataset(&loaded, 0.8, 0)?;
    println!("train {:?}, test {:?}", train.class_counts(), test.class_counts());
    Ok(())
}
