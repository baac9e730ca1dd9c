//! Runs a global-local attention block on `[B, 1 + H*W, D]` tokens.

use sckansformer::autodiff::Tape;
use sckansformer::glae::{GlaeBlock, Grid};
use sckansformer::nn::{Mode, Module};
use sckansformer::rng::substream;
use sckansformer::Tensor;

fn main() -> sckansformer::Result<()> {
    let mut rng = substream(0, "init");
    let grid = Grid::new(4, 4);
    let d = 16;
    let block = GlaeBlock::new("glae.0", d, 4, 2, &mut rng)?;
    println!("block has {} parameters", block.param_count());

    let z = Tensor::randn([2, grid.len() + 1, d], 1.0, &mut rng);
    let tape = Tape::new();
    let out = block.forward(&tape, tape.constant(z.clone()), grid, Mode::Train)?.value();
    println!("input {:?} -> output {:?}", z.shape(), out.shape());

    let mut zeroed = block.clone();
    zeroed.zero_residual_branches_();
    // Same parameter names, so a fresh tape.
    let tape = Tape::new();
    let same = *zeroed.forward(&tape, tape.constant(z.clone()), grid, Mode::Eval)?.value() == z;
    println!("with zeroed residual branches the block is the identity: {same}");
    Ok(())
}
