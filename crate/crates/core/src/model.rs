//! Full classifier: patch embedding, SCConv on the patch map, class token and
//! positional table, GLAE blocks, the Kansformer encoder stack and a linear
//! head on the final class token.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::Msa;
use crate::autodiff::{concat, Tape, Var};
use crate::error::{Error, Result};
use crate::glae::{GlaeBlock, Grid};
use crate::kan::{GridSpec, KanStack, SplineGrid};
use crate::nn::{init, matmul_last_axis, LayerNorm, Linear, Mlp, Mode, Module, Param};
use crate::scconv::{ScConv, ScConvConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub hidden: usize,
    pub heads: usize,
    pub kansformer_blocks: usize,
    pub glae_blocks: usize,
    pub num_classes: usize,
    pub kan_grid: GridSpec,
    /// Hidden width of the per-block feed-forward stack, as a multiple of `hidden`.
    pub ffn_ratio: usize,
    pub local_expansion: usize,
    pub use_scconv: bool,
    pub use_glae: bool,
    /// `false` swaps every KAN stack for a GELU MLP of the same widths.
    pub use_kan: bool,
    pub scconv: ScConvConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_h: 32,
            image_w: 32,
            channels: 3,
            patch_size: 4,
            hidden: 64,
            heads: 4,
            kansformer_blocks: 2,
            glae_blocks: 1,
            num_classes: 8,
            kan_grid: GridSpec::default(),
            ffn_ratio: 2,
            local_expansion: 2,
            use_scconv: true,
            use_glae: true,
            use_kan: true,
            scconv: ScConvConfig::default(),
        }
    }
}

/// The four rows of the module ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoScConv,
    NoGlae,
    NoKan,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoScConv, Variant::NoGlae, Variant::NoKan];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoScConv => "w/o SCConv",
            Variant::NoGlae => "w/o GLAE",
            Variant::NoKan => "w/o KAN",
        }
    }
}

impl ModelConfig {
    /// Tiny geometry used by gradient checks: 8x8 input, P=4, D=8, one block
    /// of each kind.
    pub fn tiny(num_classes: usize) -> Self {
        ModelConfig {
            image_h: 8,
            image_w: 8,
            channels: 3,
            patch_size: 4,
            hidden: 8,
            heads: 2,
            kansformer_blocks: 1,
            glae_blocks: 1,
            num_classes,
            scconv: ScConvConfig {
                gn_groups: 2,
                ..ScConvConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    pub fn variant(&self, v: Variant) -> Self {
        let mut c = self.clone();
        match v {
            Variant::Full => {}
            Variant::NoScConv => c.use_scconv = false,
            Variant::NoGlae => c.use_glae = false,
            Variant::NoKan => c.use_kan = false,
        }
        c
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.image_h / self.patch_size, self.image_w / self.patch_size)
    }

    pub fn num_patches(&self) -> usize {
        self.grid().len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.image_h % p != 0 || self.image_w % p != 0 || self.image_h == 0 || self.image_w == 0 {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible into {p}x{p} patches",
                self.image_h, self.image_w
            )));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.channels == 0 || self.num_classes < 2 || self.kansformer_blocks == 0 || self.ffn_ratio == 0 {
            return Err(Error::Config(
                "channels, ffn_ratio and kansformer_blocks must be positive and num_classes at least 2".into(),
            ));
        }
        SplineGrid::from_spec(self.kan_grid)?;
        Ok(())
    }
}

/// Feed-forward half of an encoder block.
#[derive(Debug, Clone)]
pub enum FeedForward {
    Kan(KanStack),
    Mlp(Mlp),
}

impl FeedForward {
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            FeedForward::Kan(k) => k.forward(tape, x),
            FeedForward::Mlp(m) => m.forward(tape, x),
        }
    }

    pub fn zero_output_(&mut self) {
        match self {
            FeedForward::Kan(k) => k.layers.last_mut().expect("non-empty").zero_(),
            FeedForward::Mlp(m) => {
                m.fc2.visit_params_mut(&mut |p| p.value_mut().data_mut().fill(0.0));
            }
        }
    }
}

impl Module for FeedForward {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        match self {
            FeedForward::Kan(k) => k.visit_params(f),
            FeedForward::Mlp(m) => m.visit_params(f),
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            FeedForward::Kan(k) => k.visit_params_mut(f),
            FeedForward::Mlp(m) => m.visit_params_mut(f),
        }
    }
}

/// `z + MSA(LN(z))` followed by `z + FFN(LN(z))`.
#[derive(Debug, Clone)]
pub struct KansformerBlock {
    pub ln1: LayerNorm,
    pub msa: Msa,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl KansformerBlock {
    pub fn new<R: Rng + ?Sized>(prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.hidden;
        let msa = Msa::new(&format!("{prefix}.msa"), d, cfg.heads, rng)?;
        let ffn = if cfg.use_kan {
            let grid = SplineGrid::from_spec(cfg.kan_grid)?;
            FeedForward::Kan(KanStack::new(&format!("{prefix}.kan"), &[d, cfg.ffn_ratio * d, d], &grid, rng)?)
        } else {
            FeedForward::Mlp(Mlp::new(&format!("{prefix}.mlp"), d, cfg.ffn_ratio * d, rng))
        };
        Ok(KansformerBlock {
            ln1: LayerNorm::new(&format!("{prefix}.ln1"), d),
            msa,
            ln2: LayerNorm::new(&format!("{prefix}.ln2"), d),
            ffn,
        })
    }

    pub fn zero_residual_branches_(&mut self) {
        self.msa.zero_output_();
        self.ffn.zero_output_();
    }

    pub fn forward<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Result<Var<'t>> {
        let z = z.add(self.msa.forward(tape, self.ln1.forward(tape, z)?)?)?;
        z.add(self.ffn.forward(tape, self.ln2.forward(tape, z)?)?)
    }
}

impl Module for KansformerBlock {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.ln1.visit_params(f);
        self.msa.visit_params(f);
        self.ln2.visit_params(f);
        self.ffn.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.ln1.visit_params_mut(f);
        self.msa.visit_params_mut(f);
        self.ln2.visit_params_mut(f);
        self.ffn.visit_params_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct SCKansformer {
    pub config: ModelConfig,
    /// `[P*P*C, D]`, rows ordered `(py, px, c)`.
    pub patch_proj: Param,
    /// `[1, D]`
    pub cls: Param,
    /// `[N + 1, D]`
    pub pos: Param,
    pub scconv: Option<ScConv>,
    pub glae: Vec<GlaeBlock>,
    pub blocks: Vec<KansformerBlock>,
    pub norm: LayerNorm,
    pub head: Linear,
}

impl SCKansformer {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let p = config.patch_size;
        let patch_dim = p * p * config.channels;
        let n = config.num_patches();
        let patch_proj = Param::new("patch.proj", init::fan_in_uniform(&[patch_dim, d], patch_dim, rng));
        let cls = Param::new("cls", init::normal(&[1, d], 0.02, rng));
        let pos = Param::new("pos", init::normal(&[n + 1, d], 0.02, rng));
        let scconv = if config.use_scconv {
            Some(ScConv::new("scconv", d, &config.scconv, rng)?)
        } else {
            None
        };
        let glae = if config.use_glae {
            (0..config.glae_blocks)
                .map(|i| GlaeBlock::new(&format!("glae.{i}"), d, config.heads, config.local_expansion, rng))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let blocks = (0..config.kansformer_blocks)
            .map(|b| KansformerBlock::new(&format!("block.{b}"), config, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(SCKansformer {
            config: config.clone(),
            patch_proj,
            cls,
            pos,
            scconv,
            glae,
            blocks,
            norm: LayerNorm::new("norm", d),
            head: Linear::new("head", d, config.num_classes, true, rng),
        })
    }

    /// `[B, C, H, W]` images to `[B, N, D]` patch embeddings.
    pub fn patch_embed<'t>(&self, tape: &'t Tape, images: Var<'t>) -> Result<Var<'t>> {
        let c = &self.config;
        let s = images.shape();
        if s.len() != 4 || s[1..] != [c.channels, c.image_h, c.image_w] {
            return Err(Error::shape("patch_embed", &s, &[c.channels, c.image_h, c.image_w]));
        }
        let (b, p, g) = (s[0], c.patch_size, c.grid());
        let flat = images
            .reshape(&[b, c.channels, g.h, p, g.w, p])?
            .permute(&[0, 2, 4, 3, 5, 1])?
            .reshape(&[b, g.len(), p * p * c.channels])?;
        matmul_last_axis(flat, tape.param(&self.patch_proj))
    }

    /// `[B, N+1, D]` token sequence entering the encoder stacks.
    pub fn embed<'t>(&self, tape: &'t Tape, images: Var<'t>) -> Result<Var<'t>> {
        let mut patches = self.patch_embed(tape, images)?;
        if let Some(sc) = &self.scconv {
            patches = sc.encode(tape, patches, self.config.grid())?;
        }
        let b = patches.shape()[0];
        let d = self.config.hidden;
        let cls = tape.param(&self.cls).reshape(&[1, 1, d])?.broadcast_to(&[b, 1, d])?;
        concat(&[cls, patches], 1)?.add(tape.param(&self.pos))
    }

    /// Logits `[B, num_classes]`.
    pub fn forward<'t>(&self, tape: &'t Tape, images: Var<'t>, mode: Mode) -> Result<Var<'t>> {
        let mut z = self.embed(tape, images)?;
        for g in &self.glae {
            z = g.forward(tape, z, self.config.grid(), mode)?;
        }
        for block in &self.blocks {
            z = block.forward(tape, z)?;
        }
        let z = self.norm.forward(tape, z)?;
        let b = z.shape()[0];
        let cls = z.narrow(1, 0, 1)?.reshape(&[b, self.config.hidden])?;
        self.head.forward(tape, cls)
    }

    /// Starts a [`Mode::Calibrate`] pass on every batch norm. Returns false
    /// when the model has none.
    pub fn begin_bn_calibration(&self) -> bool {
        for g in &self.glae {
            g.local.bn1.begin_calibration();
            g.local.bn2.begin_calibration();
        }
        !self.glae.is_empty()
    }

    /// Eval-mode logits for a batch of images.
    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let x = tape.constant(images.clone());
        let y = self.forward(&tape, x, Mode::Eval)?;
        Ok((*y.value()).clone())
    }

    /// Eval-mode argmax predictions.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(images)?))
    }

    /// Mean out-of-domain fraction across all KAN layers.
    pub fn kan_out_of_domain_fraction(&self) -> f64 {
        let fr: Vec<f64> = self
            .blocks
            .iter()
            .filter_map(|b| match &b.ffn {
                FeedForward::Kan(k) => Some(k.layers.iter().map(|l| l.out_of_domain_fraction())),
                FeedForward::Mlp(_) => None,
            })
            .flatten()
            .collect();
        if fr.is_empty() {
            0.0
        } else {
            fr.iter().sum::<f64>() / fr.len() as f64
        }
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(k.max(1))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

impl Module for SCKansformer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.patch_proj);
        f(&self.cls);
        f(&self.pos);
        if let Some(sc) = &self.scconv {
            sc.visit_params(f);
        }
        self.glae.iter().for_each(|g| g.visit_params(f));
        self.blocks.iter().for_each(|b| b.visit_params(f));
        self.norm.visit_params(f);
        self.head.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.patch_proj);
        f(&mut self.cls);
        f(&mut self.pos);
        if let Some(sc) = &mut self.scconv {
            sc.visit_params_mut(f);
        }
        self.glae.iter_mut().for_each(|g| g.visit_params_mut(f));
        self.blocks.iter_mut().for_each(|b| b.visit_params_mut(f));
        self.norm.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.glae.iter().for_each(|g| g.visit_buffers(f));
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.glae.iter_mut().for_each(|g| g.visit_buffers_mut(f));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patch_counts() {
        let paper = ModelConfig {
            image_h: 224,
            image_w: 224,
            patch_size: 16,
            ..ModelConfig::default()
        };
        assert_eq!(paper.num_patches(), 196);
        assert_eq!(ModelConfig::default().num_patches(), 64);
    }

    #[test]
    fn identity_projection_reproduces_flattened_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ModelConfig {
            image_h: 4,
            image_w: 4,
            channels: 1,
            patch_size: 2,
            hidden: 4,
            heads: 2,
            use_scconv: false,
            ..ModelConfig::default()
        };
        let mut m = SCKansformer::new(&cfg, &mut rng).unwrap();
        *m.patch_proj.value_mut() = Tensor::eye(4);
        let tape = Tape::new();
        let img = tape.constant(Tensor::from_fn([1, 1, 4, 4], |i| i as f64));
        let p = m.patch_embed(&tape, img).unwrap().value();
        // top-left 2x2 patch then top-right patch
        assert_eq!(&p.data()[..8], &[0.0, 1.0, 4.0, 5.0, 2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn indivisible_geometry_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ModelConfig {
            image_h: 30,
            ..ModelConfig::default()
        };
        assert!(matches!(SCKansformer::new(&cfg, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn logits_shape_and_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = SCKansformer::new(&ModelConfig::tiny(3), &mut rng).unwrap();
        let x = Tensor::randn([2, 3, 8, 8], 1.0, &mut rng);
        assert_eq!(m.logits(&x).unwrap().shape(), &[2, 3]);
        let names = m.param_names();
        for n in ["patch.proj", "cls", "pos", "scconv.sru.gamma", "scconv.cru.gwc", "glae.0.lp.dw", "block.0.kan.1.spline", "head.b"] {
            assert!(names.iter().any(|x| x == n), "{n}");
        }
        assert!(m.state_dict().contains_key("glae.0.lp.bn1.running_var"));
    }

    #[test]
    fn argmax_takes_first_maximum() {
        let t = Tensor::new([2, 3], vec![1.0, 3.0, 3.0, -1.0, -2.0, -0.5]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 2]);
    }
}
