//! Multi-head self-attention on a random token sequence. Shows the attention
//! rows summing to one and the equivariance under reordering tokens.

use sckansformer::attention::{attention_weights, Msa};
use sckansformer::autodiff::Tape;
use sckansformer::rng::substream;
use sckansformer::Tensor;

fn main() -> sckansformer::Result<()> {
    let mut rng = substream(0, "init");
    let (n, d) = (5, 8);
    let msa = Msa::new("msa", d, 2, &mut rng)?;
    let x = Tensor::randn([n, d], 1.0, &mut rng);

    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let a = attention_weights(xv, xv)?.value();
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| a.at(&[i, j])).collect();
        println!("row {i}: sum {:.15}", row.iter().sum::<f64>());
    }

    let y = msa.forward(&tape, xv)?.value();
    let reversed = Tensor::from_fn([n, d], |i| x.at(&[n - 1 - i / d, i % d]));
    let yr = msa.forward(&tape, tape.constant(reversed))?.value();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..d {
            dev = dev.max((yr.at(&[i, j]) - y.at(&[n - 1 - i, j])).abs());
        }
    }
    println!("max deviation after reversing tokens: {dev:.2e}");
    Ok(())
}
