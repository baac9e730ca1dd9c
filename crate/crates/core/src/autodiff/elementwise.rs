use crate::error::Result;
use crate::tensor::{broadcast_index_map, broadcast_shape, Tensor};

use super::{Op, Var};

/// Pointwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    /// `x * sigmoid(x)`
    Silu,
    /// tanh approximation of GELU
    Gelu,
    Exp,
    Square,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Unary {
    pub(crate) fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Silu => "silu",
            Unary::Gelu => "gelu",
            Unary::Exp => "exp",
            Unary::Square => "square",
        }
    }

    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Silu => x * sigmoid(x),
            Unary::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Unary::Exp => x.exp(),
            Unary::Square => x * x,
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Silu => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Unary::Gelu => {
                let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Unary::Exp => y,
            Unary::Square => 2.0 * x,
        }
    }

    pub(crate) fn backward(self, g: &Tensor, x: &Tensor, y: &Tensor) -> Tensor {
        let data = g
            .data()
            .iter()
            .zip(x.data().iter().zip(y.data()))
            .map(|(&g, (&x, &y))| g * self.derivative(x, y))
            .collect();
        Tensor::new(x.shape(), data).expect("shape preserved")
    }
}

/// Index maps from output positions to operand positions; `None` when the
/// operand already has the output shape.
struct Plan {
    shape: Vec<usize>,
    a: Option<Vec<usize>>,
    b: Option<Vec<usize>>,
}

fn plan(a: &[usize], b: &[usize]) -> Result<Plan> {
    let shape = broadcast_shape(a, b)?;
    let map = |s: &[usize]| (s != shape.as_slice()).then(|| broadcast_index_map(s, &shape));
    Ok(Plan {
        a: map(a),
        b: map(b),
        shape,
    })
}

fn binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let p = plan(a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let n = crate::tensor::numel(&p.shape);
    let data = (0..n)
        .map(|i| {
            let x = match &p.a {
                Some(m) => ad[m[i]],
                None => ad[i],
            };
            let y = match &p.b {
                Some(m) => bd[m[i]],
                None => bd[i],
            };
            f(x, y)
        })
        .collect();
    Tensor::new(p.shape, data)
}

/// Sums `g` over broadcast axes so it has shape `target`.
pub(crate) fn reduce_to_shape(g: &Tensor, target: &[usize]) -> Tensor {
    if g.shape() == target {
        return g.clone();
    }
    let map = broadcast_index_map(target, g.shape());
    let mut out = Tensor::zeros(target);
    let od = out.data_mut();
    for (i, &v) in g.data().iter().enumerate() {
        od[map[i]] += v;
    }
    out
}

pub(crate) fn add_backward(g: &Tensor, a: &[usize], b: &[usize]) -> (Tensor, Tensor) {
    (reduce_to_shape(g, a), reduce_to_shape(g, b))
}

pub(crate) fn mul_backward(g: &Tensor, a: &Tensor, b: &Tensor) -> (Tensor, Tensor) {
    let gb_full = binary(g, b, |g, b| g * b).expect("broadcast checked in forward");
    let ga_full = binary(g, a, |g, a| g * a).expect("broadcast checked in forward");
    (
        reduce_to_shape(&gb_full, a.shape()),
        reduce_to_shape(&ga_full, b.shape()),
    )
}

impl<'t> Var<'t> {
    /// Broadcasting addition.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let v = binary(&self.value(), &other.value(), |a, b| a + b)?;
        self.push(v, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let v = binary(&self.value(), &other.value(), |a, b| a - b)?;
        self.push(v, Op::Sub(self.id, other.id))
    }

    /// Broadcasting elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let v = binary(&self.value(), &other.value(), |a, b| a * b)?;
        self.push(v, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        let v = self.value().map(|x| x * c);
        self.push(v, Op::Scale(self.id, c))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn unary(self, u: Unary) -> Result<Var<'t>> {
        let v = self.value().map(|x| u.apply(x));
        self.push(v, Op::Unary(self.id, u))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(Unary::Sigmoid)
    }

    pub fn silu(self) -> Result<Var<'t>> {
        self.unary(Unary::Silu)
    }

    pub fn gelu(self) -> Result<Var<'t>> {
        self.unary(Unary::Gelu)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Unary::Exp)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary(Unary::Square)
    }

    /// Materializes a broadcast to `shape`.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>> {
        let src = self.value();
        let full = broadcast_shape(src.shape(), shape)?;
        if full != shape {
            return Err(crate::error::Error::shape("broadcast_to", src.shape(), shape));
        }
        let map = broadcast_index_map(src.shape(), shape);
        let d = src.data();
        let v = Tensor::new(shape, map.iter().map(|&i| d[i]).collect())?;
        self.push(v, Op::BroadcastTo(self.id))
    }
}
