use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::shape::around_axis;
use super::{Op, Var};

pub(crate) fn sum_axis_backward(g: &Tensor, in_shape: &[usize], axis: usize) -> Tensor {
    let (outer, len, inner) = around_axis(in_shape, axis);
    let mut t = Tensor::zeros(in_shape);
    let td = t.data_mut();
    let gd = g.data();
    for o in 0..outer {
        for j in 0..len {
            td[(o * len + j) * inner..(o * len + j + 1) * inner]
                .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
        }
    }
    t
}

/// Numerically stable softmax along `axis` of a raw tensor.
pub fn softmax_tensor(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = around_axis(x.shape(), axis);
    let mut out = x.clone();
    let od = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| od[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (od[at(j)] - max).exp();
                od[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                od[at(j)] /= total;
            }
            if len == 2 {
                // The larger weight is >= 0.5, so its complement is exact and
                // the pair sums to exactly 1.
                let (hi, lo) = if od[at(0)] >= od[at(1)] { (at(0), at(1)) } else { (at(1), at(0)) };
                od[lo] = 1.0 - od[hi];
            }
        }
    }
    out
}

pub(crate) fn softmax_backward(g: &Tensor, y: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = around_axis(y.shape(), axis);
    let mut out = Tensor::zeros(y.shape());
    let (od, gd, yd) = (out.data_mut(), g.data(), y.data());
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let dot: f64 = (0..len).map(|j| gd[at(j)] * yd[at(j)]).sum();
            for j in 0..len {
                od[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
            }
        }
    }
    out
}

pub(crate) fn cross_entropy_backward(g: &Tensor, probs: &Tensor, targets: &[usize]) -> Tensor {
    let k = probs.shape()[1];
    let scale = g.item() / targets.len() as f64;
    let mut out = probs.map(|p| p * scale);
    for (b, &t) in targets.iter().enumerate() {
        out.data_mut()[b * k + t] -= scale;
    }
    out
}

impl<'t> Var<'t> {
    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Result<Var<'t>> {
        let v = Tensor::scalar(self.value().sum());
        self.push(v, Op::SumAll(self.id))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sum along `axis`, optionally keeping it as a length-1 axis.
    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(Error::shape("sum_axis", x.shape(), &[axis]));
        }
        let (outer, len, inner) = around_axis(x.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        let xd = x.data();
        for o in 0..outer {
            for j in 0..len {
                let row = &xd[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        let summed = self.push(Tensor::new(shape.clone(), data)?, Op::SumAxis { x: self.id, axis })?;
        if keepdim {
            Ok(summed)
        } else {
            shape.remove(axis);
            summed.reshape(&shape)
        }
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Result<Var<'t>> {
        let len = self.shape().get(axis).copied().unwrap_or(1) as f64;
        self.sum_axis(axis, keepdim)?.scale(1.0 / len)
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(Error::shape("softmax", x.shape(), &[axis]));
        }
        self.push(softmax_tensor(&x, axis), Op::Softmax { x: self.id, axis })
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Var<'t>> {
        let logits = self.value();
        if logits.rank() != 2 || logits.shape()[0] != targets.len() || targets.is_empty() {
            return Err(Error::shape("cross_entropy", logits.shape(), &[targets.len()]));
        }
        let k = logits.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Data(format!("target {bad} out of range for {k} classes")));
        }
        let probs = softmax_tensor(&logits, 1);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(b, &t)| {
                let row = &logits.data()[b * k..(b + 1) * k];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - row[t]
            })
            .sum::<f64>()
            / targets.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                probs,
            },
        )
    }
}
