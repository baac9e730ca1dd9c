//! Uniform B-spline grids and the differentiable basis expansion.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Op, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Uniform knot grid over `[lo, hi]` with `intervals` cells, extended by
/// `order` knots on each side. `order` is the polynomial degree (3 = cubic).
#[derive(Debug, Clone, PartialEq)]
pub struct SplineGrid {
    lo: f64,
    hi: f64,
    intervals: usize,
    order: usize,
    knots: Vec<f64>,
}

/// Serializable description of a [`SplineGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
    pub order: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lo: -1.0,
            hi: 1.0,
            intervals: 5,
            order: 3,
        }
    }
}

impl SplineGrid {
    pub fn new(lo: f64, hi: f64, intervals: usize, order: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("spline grid needs lo < hi, got [{lo}, {hi}]")));
        }
        if intervals == 0 {
            return Err(Error::Config("spline grid needs at least one interval".into()));
        }
        let h = (hi - lo) / intervals as f64;
        let k = order as f64;
        let mut knots: Vec<f64> = (0..intervals + 2 * order + 1)
            .map(|i| lo + (i as f64 - k) * h)
            .collect();
        knots[order] = lo;
        knots[order + intervals] = hi;
        Ok(SplineGrid {
            lo,
            hi,
            intervals,
            order,
            knots,
        })
    }

    pub fn from_spec(spec: GridSpec) -> Result<Self> {
        Self::new(spec.lo, spec.hi, spec.intervals, spec.order)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            lo: self.lo,
            hi: self.hi,
            intervals: self.intervals,
            order: self.order,
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `intervals + order`.
    pub fn num_basis(&self) -> usize {
        self.intervals + self.order
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    /// Bottom-up Cox–de Boor. `scratch` must hold `knots.len() - 1` values;
    /// on return its first `degree + 1`.. entries hold degree-`degree` bases.
    fn cox_de_boor(&self, x: f64, degree: usize, scratch: &mut [f64]) {
        let t = &self.knots;
        let n0 = t.len() - 1;
        for i in 0..n0 {
            scratch[i] = if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 };
        }
        for d in 1..=degree {
            for i in 0..n0 - d {
                let left = (x - t[i]) / (t[i + d] - t[i]) * scratch[i];
                let right = (t[i + d + 1] - x) / (t[i + d + 1] - t[i + 1]) * scratch[i + 1];
                scratch[i] = left + right;
            }
        }
    }

    /// Basis values at `x` for all `num_basis()` functions.
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_basis()];
        let mut scratch = vec![0.0; self.knots.len() - 1];
        self.basis_into(x, &mut out, &mut scratch);
        out
    }

    pub(crate) fn basis_into(&self, x: f64, out: &mut [f64], scratch: &mut [f64]) {
        self.cox_de_boor(x, self.order, scratch);
        out.copy_from_slice(&scratch[..self.num_basis()]);
    }

    /// d/dx of every basis function at `x`.
    pub fn basis_derivative(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_basis()];
        let mut scratch = vec![0.0; self.knots.len() - 1];
        self.basis_derivative_into(x, &mut out, &mut scratch);
        out
    }

    pub(crate) fn basis_derivative_into(&self, x: f64, out: &mut [f64], scratch: &mut [f64]) {
        let k = self.order;
        if k == 0 {
            out.fill(0.0);
            return;
        }
        self.cox_de_boor(x, k - 1, scratch);
        let t = &self.knots;
        let kf = k as f64;
        for (i, o) in out.iter_mut().enumerate() {
            *o = kf / (t[i + k] - t[i]) * scratch[i] - kf / (t[i + k + 1] - t[i + 1]) * scratch[i + 1];
        }
    }
}

pub(crate) fn bspline_backward(g: &Tensor, x: &Tensor, grid: &SplineGrid) -> Tensor {
    let nb = grid.num_basis();
    let mut deriv = vec![0.0; nb];
    let mut scratch = vec![0.0; grid.knots.len() - 1];
    let gd = g.data();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &xv)| {
            grid.basis_derivative_into(xv, &mut deriv, &mut scratch);
            deriv.iter().zip(&gd[i * nb..(i + 1) * nb]).map(|(d, g)| d * g).sum()
        })
        .collect();
    Tensor::new(x.shape(), data).expect("shape preserved")
}

impl<'t> Var<'t> {
    /// Expands every element into its B-spline basis: shape `[..]` becomes
    /// `[.., num_basis]`. Differentiable in the input.
    pub fn bspline(self, grid: &SplineGrid) -> Result<Var<'t>> {
        let x = self.value();
        let nb = grid.num_basis();
        let mut data = vec![0.0; x.numel() * nb];
        let mut scratch = vec![0.0; grid.knots.len() - 1];
        for (i, &xv) in x.data().iter().enumerate() {
            grid.basis_into(xv, &mut data[i * nb..(i + 1) * nb], &mut scratch);
        }
        let mut shape = x.shape().to_vec();
        shape.push(nb);
        self.push(
            Tensor::new(shape, data)?,
            Op::Bspline {
                x: self.id(),
                grid: grid.clone(),
            },
        )
    }
}
