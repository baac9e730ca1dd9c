//! Scaled dot-product attention and multi-head self-attention.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{init, matmul_last_axis, Module, Param};
use crate::tensor::Tensor;

/// Row-normalized attention weights `softmax(Q Kᵀ / sqrt(d))` for `[N, d]`
/// or batched `[S, N, d]` operands.
pub fn attention_weights<'t>(q: Var<'t>, k: Var<'t>) -> Result<Var<'t>> {
    let (qs, ks) = (q.shape(), k.shape());
    if qs != ks || !(2..=3).contains(&qs.len()) {
        return Err(Error::shape("attention", &qs, &ks));
    }
    let d = qs[qs.len() - 1] as f64;
    let scores = if qs.len() == 2 {
        q.matmul(k.t()?)?
    } else {
        q.bmm(k.t()?)?
    };
    scores.scale(1.0 / d.sqrt())?.softmax(qs.len() - 1)
}

/// `softmax(Q Kᵀ / sqrt(d)) V`.
pub fn attention<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>) -> Result<Var<'t>> {
    if q.shape() != v.shape() {
        return Err(Error::shape("attention", &q.shape(), &v.shape()));
    }
    let w = attention_weights(q, k)?;
    if v.shape().len() == 2 {
        w.matmul(v)
    } else {
        w.bmm(v)
    }
}

/// Multi-head self-attention with `[D, D]` projections and an output map.
#[derive(Debug, Clone)]
pub struct Msa {
    pub d_model: usize,
    pub heads: usize,
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
    pub wo: Param,
}

impl Msa {
    pub fn new<R: Rng + ?Sized>(prefix: &str, d_model: usize, heads: usize, rng: &mut R) -> Result<Self> {
        let mut mk = |n: &str| Param::new(format!("{prefix}.{n}"), init::fan_in_uniform(&[d_model, d_model], d_model, rng));
        let (wq, wk, wv, wo) = (mk("wq"), mk("wk"), mk("wv"), mk("wo"));
        Self::from_weights(heads, wq, wk, wv, wo)
    }

    pub fn from_weights(heads: usize, wq: Param, wk: Param, wv: Param, wo: Param) -> Result<Self> {
        let d_model = wq.shape()[0];
        for w in [&wq, &wk, &wv, &wo] {
            if w.shape() != [d_model, d_model] {
                return Err(Error::shape("msa weights", w.shape(), &[d_model, d_model]));
            }
        }
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "model width {d_model} is not divisible by {heads} heads"
            )));
        }
        Ok(Msa {
            d_model,
            heads,
            wq,
            wk,
            wv,
            wo,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Zeroes the output projection so the module outputs exactly 0.
    pub fn zero_output_(&mut self) {
        *self.wo.value_mut() = Tensor::zeros([self.d_model, self.d_model]);
    }

    /// Self-attention over `[N, D]` or `[B, N, D]`.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let (b, n) = match shape.as_slice() {
            [n, d] if *d == self.d_model => (1, *n),
            [b, n, d] if *d == self.d_model => (*b, *n),
            _ => return Err(Error::shape("msa", &shape, &[self.d_model])),
        };
        let (h, dh) = (self.heads, self.head_dim());
        let split_heads = |w: &Param| -> Result<Var<'t>> {
            matmul_last_axis(x, tape.param(w))?
                .reshape(&[b, n, h, dh])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[b * h, n, dh])
        };
        let (q, k, v) = (split_heads(&self.wq)?, split_heads(&self.wk)?, split_heads(&self.wv)?);
        let heads = attention(q, k, v)?;
        let merged = heads
            .reshape(&[b, h, n, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, n, self.d_model])?;
        matmul_last_axis(merged, tape.param(&self.wo))?.reshape(&shape)
    }
}

impl Module for Msa {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        for p in [&self.wq, &self.wk, &self.wv, &self.wo] {
            f(p);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for p in [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo] {
            f(p);
        }
    }
}
