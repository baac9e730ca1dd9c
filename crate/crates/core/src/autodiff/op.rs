use crate::kan::SplineGrid;
use crate::tensor::Tensor;

use super::conv::{self, Conv2dSpec};
use super::elementwise::{self, Unary};
use super::linalg;
use super::norm::{self, NormGroups};
use super::reduce;
use super::shape;

/// A recorded operation: input node ids plus whatever the backward rule
/// needs that cannot be read back from the input values.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Unary(usize, Unary),
    BroadcastTo(usize),
    Matmul(usize, usize),
    Bmm(usize, usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Concat(Vec<usize>, usize),
    Narrow { x: usize, axis: usize, start: usize },
    SumAll(usize),
    SumAxis { x: usize, axis: usize },
    Softmax { x: usize, axis: usize },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Tensor },
    Standardize { x: usize, groups: NormGroups, rstd: Vec<f64> },
    Conv2d { x: usize, kernel: usize, spec: Conv2dSpec },
    Bspline { x: usize, grid: SplineGrid },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Unary(_, u) => u.name(),
            Op::BroadcastTo(_) => "broadcast_to",
            Op::Matmul(..) => "matmul",
            Op::Bmm(..) => "bmm",
            Op::Reshape(_) => "reshape",
            Op::Permute(..) => "permute",
            Op::Concat(..) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::SumAll(_) => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::Softmax { .. } => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Standardize { .. } => "standardize",
            Op::Conv2d { .. } => "conv2d",
            Op::Bspline { .. } => "bspline_basis",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) | Op::Bmm(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(x, _)
            | Op::Unary(x, _)
            | Op::BroadcastTo(x)
            | Op::Reshape(x)
            | Op::Permute(x, _)
            | Op::SumAll(x)
            | Op::Narrow { x, .. }
            | Op::SumAxis { x, .. }
            | Op::Softmax { x, .. }
            | Op::Standardize { x, .. }
            | Op::Bspline { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Concat(xs, _) => xs.clone(),
            Op::Conv2d { x, kernel, .. } => vec![*x, *kernel],
        }
    }

    /// Vector-Jacobian product: gradient contributions for each input given
    /// the gradient `g` of this node's output `out`.
    pub(crate) fn backward<'a>(
        &self,
        g: &Tensor,
        out: &Tensor,
        input: &dyn Fn(usize) -> &'a Tensor,
    ) -> Vec<(usize, Tensor)> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) => {
                let (ga, gb) = elementwise::add_backward(g, input(*a).shape(), input(*b).shape());
                vec![(*a, ga), (*b, gb)]
            }
            Op::Sub(a, b) => {
                let (ga, gb) = elementwise::add_backward(g, input(*a).shape(), input(*b).shape());
                vec![(*a, ga), (*b, gb.map(|v| -v))]
            }
            Op::Mul(a, b) => {
                let (ga, gb) = elementwise::mul_backward(g, input(*a), input(*b));
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, c) => vec![(*x, g.map(|v| v * c))],
            Op::Unary(x, u) => vec![(*x, u.backward(g, input(*x), out))],
            Op::BroadcastTo(x) => vec![(*x, elementwise::reduce_to_shape(g, input(*x).shape()))],
            Op::Matmul(a, b) => {
                let (ga, gb) = linalg::matmul_backward(g, input(*a), input(*b));
                vec![(*a, ga), (*b, gb)]
            }
            Op::Bmm(a, b) => {
                let (ga, gb) = linalg::bmm_backward(g, input(*a), input(*b));
                vec![(*a, ga), (*b, gb)]
            }
            Op::Reshape(x) => vec![(*x, g.reshape(input(*x).shape()).expect("same numel"))],
            Op::Permute(x, axes) => vec![(*x, shape::permute_backward(g, axes))],
            Op::Concat(xs, axis) => {
                let shapes: Vec<&[usize]> = xs.iter().map(|&i| input(i).shape()).collect();
                xs.iter()
                    .copied()
                    .zip(shape::concat_backward(g, &shapes, *axis))
                    .collect()
            }
            Op::Narrow { x, axis, start } => {
                vec![(*x, shape::narrow_backward(g, input(*x).shape(), *axis, *start))]
            }
            Op::SumAll(x) => vec![(*x, Tensor::full(input(*x).shape(), g.item()))],
            Op::SumAxis { x, axis } => vec![(*x, reduce::sum_axis_backward(g, input(*x).shape(), *axis))],
            Op::Softmax { axis, x } => vec![(*x, reduce::softmax_backward(g, out, *axis))],
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => vec![(*logits, reduce::cross_entropy_backward(g, probs, targets))],
            Op::Standardize { x, groups, rstd } => {
                vec![(*x, norm::standardize_backward(g, out, *groups, rstd))]
            }
            Op::Conv2d { x, kernel, spec } => {
                let (gx, gk) = conv::conv2d_backward(g, input(*x), input(*kernel), spec);
                vec![(*x, gx), (*kernel, gk)]
            }
            Op::Bspline { x, grid } => vec![(*x, crate::kan::spline::bspline_backward(g, input(*x), grid))],
        }
    }
}
