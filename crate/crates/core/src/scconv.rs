//! Spatial and channel reconstruction convolution.
//!
//! The SRU splits a feature map into informative and redundant parts with a
//! hard gate on group-normalized activations and recombines them crosswise.
//! The CRU splits channels into a rich branch (group-wise + point-wise conv)
//! and a cheap branch (point-wise conv concatenated with its input), then
//! fuses them with per-channel softmax weights from pooled statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, Conv2dSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::glae::{i2s, s2i, Grid};
use crate::nn::{init, Module, Param};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScConvConfig {
    pub gn_groups: usize,
    pub gate_threshold: f64,
    pub alpha: f64,
    pub squeeze_ratio: usize,
    pub gwc_groups: usize,
}

impl Default for ScConvConfig {
    fn default() -> Self {
        ScConvConfig {
            gn_groups: 4,
            gate_threshold: 0.5,
            alpha: 0.5,
            squeeze_ratio: 2,
            gwc_groups: 2,
        }
    }
}

/// Spatial reconstruction unit.
#[derive(Debug, Clone)]
pub struct Sru {
    pub channels: usize,
    pub groups: usize,
    pub threshold: f64,
    pub eps: f64,
    pub gamma: Param,
    pub beta: Param,
}

/// Intermediate values of one SRU pass, kept for inspection.
#[derive(Debug, Clone)]
pub struct SruTrace<'t> {
    /// `sigmoid(w ⊙ GN(x))`
    pub reweight: Tensor,
    /// Informative mask `W1`; the redundant mask is `1 - W1`.
    pub mask: Tensor,
    pub informative: Var<'t>,
    pub redundant: Var<'t>,
    pub output: Var<'t>,
}

impl Sru {
    pub fn new(prefix: &str, channels: usize, groups: usize, threshold: f64) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Config(format!(
                "{channels} channels cannot be split into {groups} normalization groups"
            )));
        }
        if channels % 2 != 0 {
            return Err(Error::Config(format!(
                "cross reconstruction needs an even channel count, got {channels}"
            )));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Config(format!("gate threshold {threshold} must lie in (0, 1)")));
        }
        Ok(Sru {
            channels,
            groups,
            threshold,
            eps: 1e-5,
            gamma: Param::new(format!("{prefix}.gamma"), Tensor::ones([channels])),
            beta: Param::new(format!("{prefix}.beta"), Tensor::zeros([channels])),
        })
    }

    /// Importance weights `gamma_i / sum_j gamma_j`.
    pub fn importance(&self) -> Result<Vec<f64>> {
        let g = self.gamma.value().data();
        let total: f64 = g.iter().sum();
        if total.abs() < 1e-12 {
            return Err(Error::Numerical("SRU scale parameters sum to zero".into()));
        }
        Ok(g.iter().map(|v| v / total).collect())
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        Ok(self.trace(tape, x)?.output)
    }

    pub fn trace<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<SruTrace<'t>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape("sru", &s, &[self.channels]));
        }
        let gn = x.group_norm(self.groups, tape.param(&self.gamma), tape.param(&self.beta), self.eps)?;
        let w = self.importance()?;
        let inner = s[2] * s[3];
        let gv = gn.value();
        let reweight = Tensor::from_fn(s.clone(), |i| {
            crate::autodiff::sigmoid(w[(i / inner) % self.channels] * gv.data()[i])
        });
        let mask = reweight.map(|m| if m > self.threshold { 1.0 } else { 0.0 });
        let informative = x.mul(tape.constant(mask.clone()))?;
        let redundant = x.mul(tape.constant(mask.map(|m| 1.0 - m)))?;

        let half = self.channels / 2;
        let a = informative.split(1, &[half, half])?;
        let b = redundant.split(1, &[half, half])?;
        let output = concat(&[a[0].add(b[1])?, a[1].add(b[0])?], 1)?;
        Ok(SruTrace {
            reweight,
            mask,
            informative,
            redundant,
            output,
        })
    }
}

impl Module for Sru {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// Channel reconstruction unit.
#[derive(Debug, Clone)]
pub struct Cru {
    pub channels: usize,
    pub up: usize,
    pub low: usize,
    pub up_squeezed: usize,
    pub low_squeezed: usize,
    pub gwc_groups: usize,
    /// `[up/r, up, 1, 1]`
    pub sq_up: Param,
    /// `[low/r, low, 1, 1]`
    pub sq_low: Param,
    /// `[C, up/r/g, 3, 3]`
    pub gwc: Param,
    /// `[C, up/r, 1, 1]`
    pub pwc_up: Param,
    /// `[C - low/r, low/r, 1, 1]`
    pub pwc_low: Param,
}

/// Intermediate values of one CRU pass.
#[derive(Debug, Clone, Copy)]
pub struct CruTrace<'t> {
    pub y1: Var<'t>,
    pub y2: Var<'t>,
    /// `[B, 2, C]` softmax weights over the two branches.
    pub beta: Var<'t>,
    pub output: Var<'t>,
}

fn conv_kernel<R: Rng + ?Sized>(name: String, shape: [usize; 4], rng: &mut R) -> Param {
    let fan_in = shape[1] * shape[2] * shape[3];
    Param::new(name, init::fan_in_uniform(&shape, fan_in, rng))
}

impl Cru {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        channels: usize,
        alpha: f64,
        squeeze_ratio: usize,
        gwc_groups: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("split ratio {alpha} must lie in (0, 1)")));
        }
        let up = (alpha * channels as f64).ceil() as usize;
        let low = channels.saturating_sub(up);
        if squeeze_ratio == 0 || gwc_groups == 0 {
            return Err(Error::Config("squeeze ratio and group count must be positive".into()));
        }
        let (up_sq, low_sq) = (up / squeeze_ratio, low / squeeze_ratio);
        if up_sq == 0 || low_sq == 0 || up % squeeze_ratio != 0 || low % squeeze_ratio != 0 {
            return Err(Error::Config(format!(
                "channel split {up}+{low} is not divisible by squeeze ratio {squeeze_ratio}"
            )));
        }
        if up_sq % gwc_groups != 0 || channels % gwc_groups != 0 {
            return Err(Error::Config(format!(
                "group-wise conv with {gwc_groups} groups does not divide {up_sq} -> {channels} channels"
            )));
        }
        Ok(Cru {
            channels,
            up,
            low,
            up_squeezed: up_sq,
            low_squeezed: low_sq,
            gwc_groups,
            sq_up: conv_kernel(format!("{prefix}.sq_up"), [up_sq, up, 1, 1], rng),
            sq_low: conv_kernel(format!("{prefix}.sq_low"), [low_sq, low, 1, 1], rng),
            gwc: conv_kernel(format!("{prefix}.gwc"), [channels, up_sq / gwc_groups, 3, 3], rng),
            pwc_up: conv_kernel(format!("{prefix}.pwc_up"), [channels, up_sq, 1, 1], rng),
            pwc_low: conv_kernel(format!("{prefix}.pwc_low"), [channels - low_sq, low_sq, 1, 1], rng),
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        Ok(self.trace(tape, x)?.output)
    }

    pub fn trace<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<CruTrace<'t>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape("cru", &s, &[self.channels]));
        }
        let point = Conv2dSpec::default();
        let parts = x.split(1, &[self.up, self.low])?;
        let x_up = parts[0].conv2d(tape.param(&self.sq_up), point)?;
        let x_low = parts[1].conv2d(tape.param(&self.sq_low), point)?;

        let gwc = x_up.conv2d(tape.param(&self.gwc), Conv2dSpec::new(1, 1, self.gwc_groups))?;
        let y1 = gwc.add(x_up.conv2d(tape.param(&self.pwc_up), point)?)?;
        let y2 = concat(&[x_low.conv2d(tape.param(&self.pwc_low), point)?, x_low], 1)?;

        let (b, c) = (s[0], self.channels);
        let pooled = concat(
            &[
                y1.global_avg_pool()?.reshape(&[b, 1, c])?,
                y2.global_avg_pool()?.reshape(&[b, 1, c])?,
            ],
            1,
        )?;
        let beta = pooled.softmax(1)?;
        let b1 = beta.narrow(1, 0, 1)?.reshape(&[b, c, 1, 1])?;
        let b2 = beta.narrow(1, 1, 1)?.reshape(&[b, c, 1, 1])?;
        let output = y1.mul(b1)?.add(y2.mul(b2)?)?;
        Ok(CruTrace { y1, y2, beta, output })
    }
}

impl Module for Cru {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        for p in [&self.sq_up, &self.sq_low, &self.gwc, &self.pwc_up, &self.pwc_low] {
            f(p);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for p in [
            &mut self.sq_up,
            &mut self.sq_low,
            &mut self.gwc,
            &mut self.pwc_up,
            &mut self.pwc_low,
        ] {
            f(p);
        }
    }
}

/// SRU followed by CRU.
#[derive(Debug, Clone)]
pub struct ScConv {
    pub sru: Sru,
    pub cru: Cru,
}

impl ScConv {
    pub fn new<R: Rng + ?Sized>(prefix: &str, channels: usize, cfg: &ScConvConfig, rng: &mut R) -> Result<Self> {
        Ok(ScConv {
            sru: Sru::new(&format!("{prefix}.sru"), channels, cfg.gn_groups, cfg.gate_threshold)?,
            cru: Cru::new(
                &format!("{prefix}.cru"),
                channels,
                cfg.alpha,
                cfg.squeeze_ratio,
                cfg.gwc_groups,
                rng,
            )?,
        })
    }

    pub fn forward_image<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let refined = self.sru.forward(tape, x)?;
        self.cru.forward(tape, refined)
    }

    /// `[B, N, D]` patch tokens through s2i -> SRU -> CRU -> i2s.
    pub fn encode<'t>(&self, tape: &'t Tape, patches: Var<'t>, grid: Grid) -> Result<Var<'t>> {
        let img = s2i(patches, grid)?;
        i2s(self.forward_image(tape, img)?)
    }
}

impl Module for ScConv {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.sru.visit_params(f);
        self.cru.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.sru.visit_params_mut(f);
        self.cru.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masks_partition_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sru = Sru::new("s", 4, 2, 0.5).unwrap();
        let tape = Tape::new();
        let x = tape.leaf(Tensor::randn([2, 4, 3, 3], 1.0, &mut rng));
        let t = sru.trace(&tape, x).unwrap();
        let sum = t.informative.add(t.redundant).unwrap().value();
        assert_eq!(*sum, *x.value());
        assert!(t.mask.data().iter().all(|&m| m == 0.0 || m == 1.0));
        assert_eq!(t.output.shape(), vec![2, 4, 3, 3]);
    }

    #[test]
    fn positive_shift_opens_every_gate() {
        let mut sru = Sru::new("s", 2, 1, 0.5).unwrap();
        *sru.beta.value_mut() = Tensor::full([2], 3.0);
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new([1, 2, 2, 2], vec![5.0, 6.0, 7.0, 8.0, 5.5, 6.5, 7.5, 8.5]).unwrap());
        let t = sru.trace(&tape, x).unwrap();
        assert!(t.mask.data().iter().all(|&m| m == 1.0));
        assert!(t.redundant.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sru_rejects_bad_channel_arithmetic() {
        assert!(matches!(Sru::new("s", 6, 4, 0.5), Err(Error::Config(_))));
        assert!(matches!(Sru::new("s", 3, 3, 0.5), Err(Error::Config(_))));
        assert!(matches!(Sru::new("s", 4, 2, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn cru_weights_form_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cru = Cru::new("c", 8, 0.5, 2, 2, &mut rng).unwrap();
        let tape = Tape::new();
        let x = tape.leaf(Tensor::randn([2, 8, 4, 4], 1.0, &mut rng));
        let t = cru.trace(&tape, x).unwrap();
        let beta = t.beta.value();
        for bi in 0..2 {
            for c in 0..8 {
                let s = beta.at(&[bi, 0, c]) + beta.at(&[bi, 1, c]);
                assert_eq!(s, 1.0);
            }
        }
        assert_eq!(t.output.shape(), vec![2, 8, 4, 4]);
        assert_eq!(t.y2.shape(), vec![2, 8, 4, 4]);
    }

    #[test]
    fn cru_channel_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        assert!(matches!(Cru::new("c", 6, 0.5, 2, 2, &mut rng), Err(Error::Config(_))));
        assert!(matches!(Cru::new("c", 8, 0.0, 2, 2, &mut rng), Err(Error::Config(_))));
        let odd = Cru::new("c", 12, 0.4, 1, 1, &mut rng).unwrap();
        assert_eq!((odd.up, odd.low), (5, 7));
    }
}
