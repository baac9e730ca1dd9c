use crate::error::{Error, Result};
use crate::tensor::{numel, strides, Tensor};

use super::{Op, Var};

pub(crate) fn permute_tensor(x: &Tensor, axes: &[usize]) -> Tensor {
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = axes.len();
    let src = x.data();
    let n = src.len();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..n {
        data.push(src[cur]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            cur += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            cur -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, data).expect("permutation preserves numel")
}

pub(crate) fn permute_backward(g: &Tensor, axes: &[usize]) -> Tensor {
    let mut inverse = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    permute_tensor(g, &inverse)
}

/// Splits a shape around `axis` into (outer, len, inner) block sizes.
pub(crate) fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

pub(crate) fn concat_backward(g: &Tensor, shapes: &[&[usize]], axis: usize) -> Vec<Tensor> {
    let (outer, total, inner) = around_axis(g.shape(), axis);
    let mut offset = 0;
    shapes
        .iter()
        .map(|s| {
            let len = s[axis];
            let mut t = Tensor::zeros(*s);
            let td = t.data_mut();
            for o in 0..outer {
                let src = &g.data()[(o * total + offset) * inner..(o * total + offset + len) * inner];
                td[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
            }
            offset += len;
            t
        })
        .collect()
}

pub(crate) fn narrow_backward(g: &Tensor, in_shape: &[usize], axis: usize, start: usize) -> Tensor {
    let (outer, total, inner) = around_axis(in_shape, axis);
    let len = g.shape()[axis];
    let mut t = Tensor::zeros(in_shape);
    let td = t.data_mut();
    for o in 0..outer {
        let dst = (o * total + start) * inner;
        td[dst..dst + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    t
}

impl<'t> Var<'t> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        self.push(v, Op::Reshape(self.id))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let mut seen = vec![false; x.rank()];
        let valid = axes.len() == x.rank()
            && axes.iter().all(|&a| a < seen.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(Error::shape("permute", x.shape(), axes));
        }
        let v = permute_tensor(&x, axes);
        self.push(v, Op::Permute(self.id, axes.to_vec()))
    }

    /// Slice of length `len` starting at `start` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() || start + len > x.shape()[axis] {
            return Err(Error::shape("narrow", x.shape(), &[axis, start, len]));
        }
        let (outer, total, inner) = around_axis(x.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&x.data()[(o * total + start) * inner..(o * total + start + len) * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        self.push(Tensor::new(shape, data)?, Op::Narrow { x: self.id, axis, start })
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(self, axis: usize, sizes: &[usize]) -> Result<Vec<Var<'t>>> {
        let total: usize = sizes.iter().sum();
        let shape = self.shape();
        if axis >= shape.len() || total != shape[axis] {
            return Err(Error::shape("split", &shape, sizes));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let v = self.narrow(axis, start, len);
                start += len;
                v
            })
            .collect()
    }
}

/// Concatenates along `axis`; all other axes must agree.
pub fn concat<'t>(xs: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let values: Vec<_> = xs.iter().map(|v| v.value()).collect();
    let base = values[0].shape();
    if axis >= base.len() {
        return Err(Error::shape("concat", base, &[axis]));
    }
    for (v, x) in values.iter().zip(xs) {
        first.same_tape(x)?;
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter().zip(base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::shape("concat", base, s));
        }
    }
    let total: usize = values.iter().map(|v| v.shape()[axis]).sum();
    let (outer, _, inner) = around_axis(base, axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for v in &values {
            let len = v.shape()[axis];
            data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut shape = base.to_vec();
    shape[axis] = total;
    first.push(
        Tensor::new(shape, data)?,
        Op::Concat(xs.iter().map(|v| v.id).collect(), axis),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn permute_matches_index_formula() {
        let x = Tensor::from_fn([2, 3, 4], |i| i as f64);
        let y = permute_tensor(&x, &[2, 0, 1]);
        assert_eq!(y.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(y.at(&[c, a, b]), x.at(&[a, b, c]));
                }
            }
        }
        assert_eq!(permute_backward(&y, &[2, 0, 1]), x);
    }

    #[test]
    fn split_then_concat_is_identity() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn([2, 5, 3], |i| i as f64));
        let parts = x.split(1, &[1, 4]).unwrap();
        assert_eq!(parts[0].shape(), vec![2, 1, 3]);
        let back = concat(&parts, 1).unwrap();
        assert_eq!(*back.value(), *x.value());
    }

    #[test]
    fn narrow_out_of_range_errors() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2, 3]));
        assert!(x.narrow(1, 2, 2).is_err());
        assert!(x.narrow(2, 0, 1).is_err());
    }

    #[test]
    fn invalid_permutation_errors() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2, 3]));
        assert!(x.permute(&[0, 0]).is_err());
        assert!(x.permute(&[0]).is_err());
    }
}
