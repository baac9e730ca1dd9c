//! Scores a hand-written set of predictions and writes the report files.
//!
//! cargo run --example metrics_report -- [out_dir]

use sckansformer::metrics::{compute_metrics, confusion};

fn main() -> sckansformer::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/metrics_example".into());
    let truth = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2];
    let pred = [0, 0, 0, 0, 0, 1, 0, 0, 1, 1, 1, 2, 2, 2, 2, 2];
    let names: Vec<String> = ["neutrophil", "lymphocyte", "monocyte"].map(String::from).to_vec();

    let cm = confusion(&truth, &pred, 3)?;
    let report = compute_metrics(&cm)?.with_class_names(&names);
    print!("{}", cm.to_csv(&names));
    for (name, c) in names.iter().zip(&report.per_class) {
        println!("{name:<11} precision {:.3} recall {:.3} f1 {:.3}", c.precision, c.recall, c.f1);
    }
    println!(
        "macro precision {:.4}, recall {:.4}, f1 {:.4}; accuracy {:.4}",
        report.macro_precision, report.macro_recall, report.macro_f1, report.accuracy
    );
    report.write_all(out.as_ref())?;
    println!("wrote metrics.json, confusion.csv and confusion.svg to {out}");
    Ok(())
}
