//! Builds a small graph on the tape and reads gradients back.

use sckansformer::autodiff::Tape;
use sckansformer::Tensor;

fn main() -> sckansformer::Result<()> {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new([2, 3], vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5])?);
    let w = tape.leaf(Tensor::new([3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0])?);

    // loss = mean(silu(x W)^2)
    let y = x.matmul(w)?.silu()?;
    let loss = y.square()?.mean()?;
    let grads = tape.backward(loss)?;

    println!("loss   = {:.6}", loss.value().item());
    println!("dL/dx  = {:?}", grads.wrt(x).expect("x is a leaf").data());
    println!("dL/dw  = {:?}", grads.wrt(w).expect("w is a leaf").data());

    let p = tape.leaf(Tensor::new([1, 4], vec![1.0, 2.0, 3.0, 4.0])?);
    let s = p.softmax(1)?;
    println!("softmax([1,2,3,4]) = {:?}", s.value().data());
    Ok(())
}
