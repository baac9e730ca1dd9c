//! Builds the desk-scale classifier and its ablation variants and runs one
//! forward pass on random images.

use sckansformer::model::{ModelConfig, SCKansformer, Variant};
use sckansformer::nn::Module;
use sckansformer::rng::substream;
use sckansformer::Tensor;

fn main() -> sckansformer::Result<()> {
    let base = ModelConfig::default();
    let images = Tensor::rand_uniform([2, 3, base.image_h, base.image_w], -1.0, 1.0, &mut substream(0, "images"));
    for v in Variant::ALL {
        let model = SCKansformer::new(&base.variant(v), &mut substream(0, "init"))?;
        let logits = model.logits(&images)?;
        println!(
            "{:<11} {:>8} params, logits {:?}, predictions {:?}",
            v.label(),
            model.param_count(),
            logits.shape(),
            model.predict(&images)?
        );
    }
    Ok(())
}
