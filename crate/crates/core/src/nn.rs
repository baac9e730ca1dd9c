//! Named parameters, the module visitor trait and small reusable layers.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::Rng;

use crate::autodiff::{RunningStats, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Forward-pass mode; controls batch-norm statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
    /// Batch statistics like `Train`, but batch norms replace their running
    /// averages with the exact mean over the batches seen since
    /// [`BatchNorm::begin_calibration`].
    Calibrate,
}

/// A trainable tensor with a stable checkpoint name.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            name: name.into(),
            value,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Var<'t> {
        tape.param(self)
    }
}

/// Anything owning parameters (and optionally non-trainable buffers).
pub trait Module {
    fn visit_params(&self, f: &mut dyn FnMut(&Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    /// Non-trainable state such as batch-norm running averages.
    fn visit_buffers(&self, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_buffers_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Tensor)) {}

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value().numel());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |p| names.push(p.name().to_string()));
        names
    }

    /// Every parameter and buffer by name.
    fn state_dict(&self) -> BTreeMap<String, Tensor> {
        let mut map = BTreeMap::new();
        self.visit_params(&mut |p| {
            map.insert(p.name().to_string(), p.value().clone());
        });
        self.visit_buffers(&mut |name, t| {
            map.insert(name.to_string(), t.clone());
        });
        map
    }

    /// Overwrites parameters and buffers from `state`. Every entry must be
    /// consumed and every slot filled, with matching shapes.
    fn load_state_dict(&mut self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut used = 0usize;
        let mut problem: Option<Error> = None;
        let mut take = |name: &str, slot: &mut Tensor| {
            if problem.is_some() {
                return;
            }
            match state.get(name) {
                Some(t) if t.shape() == slot.shape() => {
                    *slot = t.clone();
                    used += 1;
                }
                Some(t) => {
                    problem = Some(Error::Config(format!(
                        "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                        t.shape(),
                        slot.shape()
                    )))
                }
                None => problem = Some(Error::Config(format!("checkpoint is missing tensor {name}"))),
            }
        };
        self.visit_params_mut(&mut |p| {
            let name = p.name().to_string();
            take(&name, p.value_mut());
        });
        self.visit_buffers_mut(&mut |name, t| take(name, t));
        if let Some(e) = problem {
            return Err(e);
        }
        if used != state.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors but the model consumed {used}",
                state.len()
            )));
        }
        Ok(())
    }
}

pub mod init {
    use super::*;

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Tensor::rand_uniform(shape, -bound, bound, rng)
    }

    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
        Tensor::randn(shape, std, rng)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(prefix: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(format!("{prefix}.gamma"), Tensor::ones([dim])),
            beta: Param::new(format!("{prefix}.beta"), Tensor::zeros([dim])),
            eps: 1e-5,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(tape.param(&self.gamma), tape.param(&self.beta), self.eps)
    }
}

impl Module for LayerNorm {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// Batch normalization with running statistics behind a lock so that eval
/// forwards can share the module across threads.
#[derive(Debug)]
pub struct BatchNorm {
    pub prefix: String,
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
    stats: Mutex<RunningStats>,
}

impl Clone for BatchNorm {
    fn clone(&self) -> Self {
        BatchNorm {
            prefix: self.prefix.clone(),
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            eps: self.eps,
            stats: Mutex::new(self.stats()),
        }
    }
}

impl BatchNorm {
    pub fn new(prefix: &str, channels: usize) -> Self {
        BatchNorm {
            prefix: prefix.to_string(),
            gamma: Param::new(format!("{prefix}.gamma"), Tensor::ones([channels])),
            beta: Param::new(format!("{prefix}.beta"), Tensor::zeros([channels])),
            eps: 1e-5,
            stats: Mutex::new(RunningStats::new(channels)),
        }
    }

    /// Restarts the cumulative average used by [`Mode::Calibrate`].
    pub fn begin_calibration(&self) {
        self.stats.lock().expect("bn stats lock").calibration_batches = 0;
    }

    pub fn stats(&self) -> RunningStats {
        self.stats.lock().expect("bn stats lock").clone()
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>, mode: Mode) -> Result<Var<'t>> {
        let mut stats = self.stats.lock().expect("bn stats lock");
        x.batch_norm(tape.param(&self.gamma), tape.param(&self.beta), &mut stats, mode, self.eps)
    }
}

impl Module for BatchNorm {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        let s = self.stats.lock().expect("bn stats lock");
        f(&format!("{}.running_mean", self.prefix), &s.mean);
        f(&format!("{}.running_var", self.prefix), &s.var);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let s = self.stats.get_mut().expect("bn stats lock");
        f(&format!("{}.running_mean", self.prefix), &mut s.mean);
        f(&format!("{}.running_var", self.prefix), &mut s.var);
    }
}

/// `y = x · W (+ b)` over the last axis; `W` is `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        Linear {
            weight: Param::new(format!("{name}.w"), init::fan_in_uniform(&[d_in, d_out], d_in, rng)),
            bias: bias.then(|| Param::new(format!("{name}.b"), Tensor::zeros([d_out]))),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let y = matmul_last_axis(x, tape.param(&self.weight))?;
        match &self.bias {
            Some(b) => y.add(tape.param(b)),
            None => Ok(y),
        }
    }
}

impl Module for Linear {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Applies a `[d_in, d_out]` matrix to the last axis of `x`.
pub fn matmul_last_axis<'t>(x: Var<'t>, w: Var<'t>) -> Result<Var<'t>> {
    let shape = x.shape();
    let ws = w.shape();
    let d_in = *shape.last().ok_or_else(|| Error::shape("linear", &shape, &ws))?;
    if ws.len() != 2 || ws[0] != d_in {
        return Err(Error::shape("linear", &shape, &ws));
    }
    let rows = shape[..shape.len() - 1].iter().product();
    let y = x.reshape(&[rows, d_in])?.matmul(w)?;
    let mut out = shape;
    *out.last_mut().expect("rank >= 1") = ws[1];
    y.reshape(&out)
}

/// Two-layer perceptron `W1 -> GELU -> W2`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(prefix: &str, d: usize, hidden: usize, rng: &mut R) -> Self {
        Mlp {
            fc1: Linear::new(&format!("{prefix}.fc1"), d, hidden, true, rng),
            fc2: Linear::new(&format!("{prefix}.fc2"), hidden, d, true, rng),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.fc1.forward(tape, x)?.gelu()?;
        self.fc2.forward(tape, h)
    }
}

impl Module for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc1.visit_params_mut(f);
        self.fc2.visit_params_mut(f);
    }
}
