//! Global-local attention encoder: multi-head self-attention for long-range
//! structure plus a convolutional "local part" that restores the 2-D patch
//! layout and mixes neighbouring patches with a depthwise 3x3 convolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::Msa;
use crate::autodiff::{concat, Conv2dSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{init, BatchNorm, LayerNorm, Mode, Module, Param};
use crate::tensor::Tensor;

/// Patch grid dimensions; patch `i` sits at row `i / w`, column `i % w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
}

impl Grid {
    pub fn new(h: usize, w: usize) -> Self {
        Grid { h, w }
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Class token plus patch tokens, batched: `cls` is `[B, 1, D]`, `patches`
/// is `[B, N, D]` with `N = grid.h * grid.w`.
#[derive(Debug, Clone, Copy)]
pub struct TokenSequence<'t> {
    pub cls: Var<'t>,
    pub patches: Var<'t>,
    pub grid: Grid,
}

fn as_batched<'t>(z: Var<'t>) -> Result<Var<'t>> {
    let s = z.shape();
    match s.len() {
        2 => z.reshape(&[1, s[0], s[1]]),
        3 => Ok(z),
        _ => Err(Error::shape("token sequence", &s, &[])),
    }
}

/// Splits `[(N+1), D]` or `[B, N+1, D]` into class and patch tokens.
pub fn split_sequence<'t>(z: Var<'t>, grid: Grid) -> Result<TokenSequence<'t>> {
    let z = as_batched(z)?;
    let s = z.shape();
    if s[1] < 2 {
        return Err(Error::shape("split_sequence", &s, &[grid.h, grid.w]));
    }
    let n = s[1] - 1;
    if n != grid.len() {
        return Err(Error::Config(format!(
            "{n} patch tokens do not fill a {}x{} grid",
            grid.h, grid.w
        )));
    }
    Ok(TokenSequence {
        cls: z.narrow(1, 0, 1)?,
        patches: z.narrow(1, 1, n)?,
        grid,
    })
}

impl<'t> TokenSequence<'t> {
    /// `[B, N+1, D]` with the class token first.
    pub fn concat(&self) -> Result<Var<'t>> {
        concat(&[self.cls, self.patches], 1)
    }

    pub fn width(&self) -> usize {
        self.patches.shape()[2]
    }
}

/// Sequence to image: `[B, N, D]` patches to a `[B, D, h, w]` feature map.
pub fn s2i<'t>(patches: Var<'t>, grid: Grid) -> Result<Var<'t>> {
    let p = as_batched(patches)?;
    let s = p.shape();
    if s[1] != grid.len() {
        return Err(Error::shape("s2i", &s, &[grid.h, grid.w]));
    }
    p.permute(&[0, 2, 1])?.reshape(&[s[0], s[2], grid.h, grid.w])
}

/// Image to sequence, the inverse of [`s2i`].
pub fn i2s(image: Var<'_>) -> Result<Var<'_>> {
    let s = image.shape();
    if s.len() != 4 {
        return Err(Error::shape("i2s", &s, &[]));
    }
    image.reshape(&[s[0], s[1], s[2] * s[3]])?.permute(&[0, 2, 1])
}

/// `x * sigmoid(x)`.
pub fn h_swish(x: Var<'_>) -> Result<Var<'_>> {
    x.silu()
}

/// Expand (1x1) -> BN -> h-swish -> depthwise 3x3 -> squeeze (1x1) -> BN.
#[derive(Debug, Clone)]
pub struct LocalPart {
    pub d_model: usize,
    pub expansion: usize,
    /// `[eD, D, 1, 1]`
    pub expand: Param,
    /// `[eD, 1, 3, 3]`
    pub dw: Param,
    /// `[D, eD, 1, 1]`
    pub squeeze: Param,
    pub bn1: BatchNorm,
    pub bn2: BatchNorm,
}

impl LocalPart {
    pub fn new<R: Rng + ?Sized>(prefix: &str, d_model: usize, expansion: usize, rng: &mut R) -> Result<Self> {
        if expansion == 0 {
            return Err(Error::Config("local part expansion factor must be >= 1".into()));
        }
        let e = d_model * expansion;
        Ok(LocalPart {
            d_model,
            expansion,
            expand: Param::new(format!("{prefix}.expand"), init::fan_in_uniform(&[e, d_model, 1, 1], d_model, rng)),
            dw: Param::new(format!("{prefix}.dw"), init::fan_in_uniform(&[e, 1, 3, 3], 9, rng)),
            squeeze: Param::new(format!("{prefix}.squeeze"), init::fan_in_uniform(&[d_model, e, 1, 1], e, rng)),
            bn1: BatchNorm::new(&format!("{prefix}.bn1"), e),
            bn2: BatchNorm::new(&format!("{prefix}.bn2"), d_model),
        })
    }

    pub fn hidden(&self) -> usize {
        self.d_model * self.expansion
    }

    /// Sets the depthwise kernel to a centred delta, making that step the
    /// identity.
    pub fn set_delta_dw_(&mut self) {
        let e = self.hidden();
        *self.dw.value_mut() = Tensor::from_fn([e, 1, 3, 3], |i| if i % 9 == 4 { 1.0 } else { 0.0 });
    }

    pub fn zero_squeeze_(&mut self) {
        self.squeeze.value_mut().data_mut().fill(0.0);
    }

    /// The convolutional pipeline on a `[B, D, h, w]` map.
    pub fn forward_image<'t>(&self, tape: &'t Tape, img: Var<'t>, mode: Mode) -> Result<Var<'t>> {
        let expanded = img.conv2d(tape.param(&self.expand), Conv2dSpec::default())?;
        let expanded = h_swish(self.bn1.forward(tape, expanded, mode)?)?;
        let dw = expanded.conv2d(tape.param(&self.dw), Conv2dSpec::new(1, 1, self.hidden()))?;
        let squeezed = dw.conv2d(tape.param(&self.squeeze), Conv2dSpec::default())?;
        self.bn2.forward(tape, squeezed, mode)
    }

    /// Runs the pipeline on the patch tokens; the class token passes through.
    pub fn forward<'t>(&self, tape: &'t Tape, z: &TokenSequence<'t>, mode: Mode) -> Result<TokenSequence<'t>> {
        if z.width() != self.d_model {
            return Err(Error::shape("local_part", &z.patches.shape(), &[self.d_model]));
        }
        let img = s2i(z.patches, z.grid)?;
        let out = self.forward_image(tape, img, mode)?;
        Ok(TokenSequence {
            cls: z.cls,
            patches: i2s(out)?,
            grid: z.grid,
        })
    }
}

impl Module for LocalPart {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.expand);
        f(&self.dw);
        f(&self.squeeze);
        self.bn1.visit_params(f);
        self.bn2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.expand);
        f(&mut self.dw);
        f(&mut self.squeeze);
        self.bn1.visit_params_mut(f);
        self.bn2.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.bn1.visit_buffers_mut(f);
        self.bn2.visit_buffers_mut(f);
    }
}

/// `u = z + MSA(LN(z))`, then patch rows get `u + LocalPart(u)`; the class
/// row of `u` is carried through.
#[derive(Debug, Clone)]
pub struct GlaeBlock {
    pub ln: LayerNorm,
    pub msa: Msa,
    pub local: LocalPart,
}

impl GlaeBlock {
    pub fn new<R: Rng + ?Sized>(prefix: &str, d_model: usize, heads: usize, expansion: usize, rng: &mut R) -> Result<Self> {
        Ok(GlaeBlock {
            ln: LayerNorm::new(&format!("{prefix}.ln"), d_model),
            msa: Msa::new(&format!("{prefix}.msa"), d_model, heads, rng)?,
            local: LocalPart::new(&format!("{prefix}.lp"), d_model, expansion, rng)?,
        })
    }

    /// Zeroes both residual branches; the block becomes the identity. The
    /// trailing BN affine is cleared too, so the identity survives eval mode
    /// after the running statistics have moved.
    pub fn zero_residual_branches_(&mut self) {
        self.msa.zero_output_();
        self.local.zero_squeeze_();
        self.local.bn2.gamma.value_mut().data_mut().fill(0.0);
        self.local.bn2.beta.value_mut().data_mut().fill(0.0);
    }

    pub fn forward<'t>(&self, tape: &'t Tape, z: Var<'t>, grid: Grid, mode: Mode) -> Result<Var<'t>> {
        let shape = z.shape();
        let zb = as_batched(z)?;
        let u = zb.add(self.msa.forward(tape, self.ln.forward(tape, zb)?)?)?;
        let seq = split_sequence(u, grid)?;
        let local = self.local.forward(tape, &seq, mode)?;
        let out = TokenSequence {
            cls: seq.cls,
            patches: seq.patches.add(local.patches)?,
            grid,
        };
        out.concat()?.reshape(&shape)
    }
}

impl Module for GlaeBlock {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.ln.visit_params(f);
        self.msa.visit_params(f);
        self.local.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.ln.visit_params_mut(f);
        self.msa.visit_params_mut(f);
        self.local.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.local.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.local.visit_buffers_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_five_rows_on_two_by_two() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::from_fn([5, 3], |i| i as f64));
        let seq = split_sequence(z, Grid::new(2, 2)).unwrap();
        assert_eq!(seq.cls.value().data(), &[0.0, 1.0, 2.0]);
        assert_eq!(seq.patches.shape(), vec![1, 4, 3]);
        assert_eq!(seq.patches.value().data()[0], 3.0);
        let back = seq.concat().unwrap().reshape(&[5, 3]).unwrap();
        assert_eq!(*back.value(), *z.value());
    }

    #[test]
    fn seventeen_rows_fill_four_by_four() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::zeros([17, 2]));
        let seq = split_sequence(z, Grid::new(4, 4)).unwrap();
        assert_eq!(seq.patches.shape(), vec![1, 16, 2]);
        assert!(matches!(split_sequence(z, Grid::new(3, 5)), Err(Error::Config(_))));
        let one = tape.constant(Tensor::zeros([1, 2]));
        assert!(split_sequence(one, Grid::new(0, 0)).is_err());
    }

    #[test]
    fn s2i_places_patches_row_major() {
        let tape = Tape::new();
        // 4 patches of width 1 with values 0..4
        let p = tape.constant(Tensor::from_fn([1, 4, 1], |i| i as f64));
        let img = s2i(p, Grid::new(2, 2)).unwrap().value();
        assert_eq!(img.at(&[0, 0, 0, 1]), 1.0);
        assert_eq!(img.at(&[0, 0, 1, 0]), 2.0);
    }

    #[test]
    fn grid_orientation_matters() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::from_fn([1, 4, 2], |i| i as f64));
        let a = s2i(p, Grid::new(1, 4)).unwrap().value();
        let b = s2i(p, Grid::new(4, 1)).unwrap().value();
        assert_ne!(a.shape(), b.shape());
        assert_ne!(*a, *b);
        assert!(s2i(p, Grid::new(3, 1)).is_err());
    }

    #[test]
    fn h_swish_values() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new([2], vec![0.0, 10.0]).unwrap());
        let y = h_swish(x).unwrap().value();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 9.999_546_0).abs() < 1e-6);
    }
}
