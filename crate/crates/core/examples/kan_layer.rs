//! Evaluates a B-spline basis and a KAN layer, then fits the layer to sin(x)
//! with a few hundred Adam steps.

use sckansformer::autodiff::Tape;
use sckansformer::kan::{KanLayer, SplineGrid};
use sckansformer::rng::substream;
use sckansformer::train::{Adam, AdamConfig};
use sckansformer::Tensor;

fn main() -> sckansformer::Result<()> {
    let grid = SplineGrid::new(-1.0, 1.0, 5, 3)?;
    let b = grid.basis(0.3);
    println!("{} cubic basis functions at x=0.3, sum {:.15}", b.len(), b.iter().sum::<f64>());

    let mut layer = KanLayer::new("kan", 1, 1, grid, &mut substream(0, "init"));
    let xs = Tensor::from_fn([64, 1], |i| -1.0 + 2.0 * i as f64 / 63.0);
    let target = xs.map(|x| (3.0 * x).sin());
    let mut adam = Adam::new(AdamConfig::default());
    for step in 0..=400 {
        let tape = Tape::new();
        let y = layer.forward(&tape, tape.constant(xs.clone()))?;
        let loss = y.sub(tape.constant(target.clone()))?.square()?.mean()?;
        if step % 100 == 0 {
            println!("step {step:>3}: mse {:.5}", loss.value().item());
        }
        let grads = tape.backward(loss)?;
        adam.step(&mut layer, &grads, 2e-2)?;
    }
    Ok(())
}
