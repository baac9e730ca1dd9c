//! Spatial and channel reconstruction on a feature map: the SRU masks, the
//! CRU branch weights and the combined unit.

use sckansformer::autodiff::Tape;
use sckansformer::rng::substream;
use sckansformer::scconv::{ScConv, ScConvConfig};
use sckansformer::Tensor;

fn main() -> sckansformer::Result<()> {
    let mut rng = substream(0, "init");
    let c = 16;
    let unit = ScConv::new("scconv", c, &ScConvConfig::default(), &mut rng)?;
    let x = Tensor::randn([2, c, 6, 6], 1.0, &mut rng);

    let tape = Tape::new();
    let sru = unit.sru.trace(&tape, tape.constant(x.clone()))?;
    let kept = sru.mask.data().iter().filter(|&&m| m == 1.0).count();
    println!("SRU marks {kept} of {} activations informative", sru.mask.numel());

    let cru = unit.cru.trace(&tape, sru.output)?;
    let beta = cru.beta.value();
    println!(
        "CRU weights for channel 0: rich {:.4}, cheap {:.4}",
        beta.at(&[0, 0, 0]),
        beta.at(&[0, 1, 0])
    );

    let y = unit.forward_image(&tape, tape.constant(x))?;
    println!("output shape {:?}", y.shape());
    Ok(())
}
