use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{init, Module, Param};
use crate::tensor::Tensor;

use super::SplineGrid;

/// Fixed nonlinearity on the residual base path of each edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseActivation {
    #[default]
    Silu,
    Identity,
}

impl BaseActivation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            BaseActivation::Silu => x * crate::autodiff::sigmoid(x),
            BaseActivation::Identity => x,
        }
    }

    fn forward<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            BaseActivation::Silu => x.silu(),
            BaseActivation::Identity => Ok(x),
        }
    }
}

/// One KAN layer `Phi` mapping `n_in` features to `n_out`.
#[derive(Debug)]
pub struct KanLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub grid: SplineGrid,
    pub base_activation: BaseActivation,
    /// `[n_out, n_in, num_basis]`
    pub spline: Param,
    /// `[n_out, n_in]`
    pub base_weight: Param,
    seen: AtomicU64,
    out_of_domain: AtomicU64,
}

impl Clone for KanLayer {
    fn clone(&self) -> Self {
        KanLayer {
            n_in: self.n_in,
            n_out: self.n_out,
            grid: self.grid.clone(),
            base_activation: self.base_activation,
            spline: self.spline.clone(),
            base_weight: self.base_weight.clone(),
            seen: AtomicU64::new(self.seen.load(Ordering::Relaxed)),
            out_of_domain: AtomicU64::new(self.out_of_domain.load(Ordering::Relaxed)),
        }
    }
}

impl KanLayer {
    /// Random init: spline coefficients `N(0, 0.1^2) / sqrt(n_in)`, base
    /// weights fan-in uniform.
    pub fn new<R: Rng + ?Sized>(prefix: &str, n_in: usize, n_out: usize, grid: SplineGrid, rng: &mut R) -> Self {
        let nb = grid.num_basis();
        let spline = init::normal(&[n_out, n_in, nb], 0.1 / (n_in as f64).sqrt(), rng);
        let base = init::fan_in_uniform(&[n_out, n_in], n_in, rng);
        Self::from_parts(prefix, grid, spline, base).expect("consistent shapes")
    }

    pub fn from_parts(prefix: &str, grid: SplineGrid, spline: Tensor, base_weight: Tensor) -> Result<Self> {
        let s = spline.shape();
        if s.len() != 3 || s[2] != grid.num_basis() {
            return Err(Error::Config(format!(
                "spline coefficients {s:?} must be [n_out, n_in, {}]",
                grid.num_basis()
            )));
        }
        let (n_out, n_in) = (s[0], s[1]);
        if base_weight.shape() != [n_out, n_in] {
            return Err(Error::shape("kan base weight", base_weight.shape(), &[n_out, n_in]));
        }
        Ok(KanLayer {
            n_in,
            n_out,
            grid,
            base_activation: BaseActivation::Silu,
            spline: Param::new(format!("{prefix}.spline"), spline),
            base_weight: Param::new(format!("{prefix}.base_w"), base_weight),
            seen: AtomicU64::new(0),
            out_of_domain: AtomicU64::new(0),
        })
    }

    /// `n_in * n_out * (G + k) + n_in * n_out`
    pub fn expected_param_count(n_in: usize, n_out: usize, grid: &SplineGrid) -> usize {
        n_in * n_out * grid.num_basis() + n_in * n_out
    }

    /// Fraction of inputs seen so far that fell outside `[lo, hi]`.
    pub fn out_of_domain_fraction(&self) -> f64 {
        let seen = self.seen.load(Ordering::Relaxed);
        if seen == 0 {
            0.0
        } else {
            self.out_of_domain.load(Ordering::Relaxed) as f64 / seen as f64
        }
    }

    /// Zeroes both branches so the layer outputs exactly 0.
    pub fn zero_(&mut self) {
        self.spline.value_mut().data_mut().fill(0.0);
        self.base_weight.value_mut().data_mut().fill(0.0);
    }

    /// Applies the layer to the last axis of `x`.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.last() != Some(&self.n_in) {
            return Err(Error::shape("kan_layer", &shape, &[self.n_in, self.n_out]));
        }
        {
            let v = x.value();
            let outside = v.data().iter().filter(|&&xv| !self.grid.contains(xv)).count();
            self.seen.fetch_add(v.numel() as u64, Ordering::Relaxed);
            self.out_of_domain.fetch_add(outside as u64, Ordering::Relaxed);
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let nb = self.grid.num_basis();
        let x2 = x.reshape(&[rows, self.n_in])?;

        let base_w = tape.param(&self.base_weight).t()?;
        let base = self.base_activation.forward(x2)?.matmul(base_w)?;

        let coeffs = tape
            .param(&self.spline)
            .reshape(&[self.n_out, self.n_in * nb])?
            .t()?;
        let spline = x2.bspline(&self.grid)?.reshape(&[rows, self.n_in * nb])?.matmul(coeffs)?;

        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = self.n_out;
        base.add(spline)?.reshape(&out_shape)
    }
}

impl Module for KanLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.spline);
        f(&self.base_weight);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.spline);
        f(&mut self.base_weight);
    }
}

/// Composition `Phi_{K-1} ∘ … ∘ Phi_0`.
#[derive(Debug, Clone)]
pub struct KanStack {
    pub layers: Vec<KanLayer>,
}

impl KanStack {
    /// Layers with widths `widths[0] -> widths[1] -> …`, named `{prefix}.{i}`.
    pub fn new<R: Rng + ?Sized>(prefix: &str, widths: &[usize], grid: &SplineGrid, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("a KAN stack needs at least two widths".into()));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| KanLayer::new(&format!("{prefix}.{i}"), w[0], w[1], grid.clone(), rng))
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<KanLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a KAN stack needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::Config(format!(
                    "KAN layer {i} outputs {} features but layer {} expects {}",
                    pair[0].n_out,
                    i + 1,
                    pair[1].n_in
                )));
            }
        }
        Ok(KanStack { layers })
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        self.layers.iter().try_fold(x, |h, layer| layer.forward(tape, h))
    }
}

impl Module for KanStack {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}
