//! Finite-difference gradient checks for one module, or all of them.
//!
//! cargo run --release --example gradcheck -- [scope]

use sckansformer::gradcheck::{run, GradcheckOptions};

fn main() -> sckansformer::Result<()> {
    let scope = std::env::args().nth(1).unwrap_or_else(|| "kan".into());
    let report = run(&scope, &GradcheckOptions::default())?;
    print!("{}", report.render());
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
