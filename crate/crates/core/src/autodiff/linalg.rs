use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Op, Var};

/// `c (+)= op(a) · op(b)` for row-major operands, where `op` optionally
/// transposes. Logical shapes are `[m, k]`, `[k, n]`, `[m, n]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn matmul_backward(g: &Tensor, a: &Tensor, b: &Tensor) -> (Tensor, Tensor) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut ga = Tensor::zeros([m, k]);
    let mut gb = Tensor::zeros([k, n]);
    // dA = dY · Bᵀ, dB = Aᵀ · dY
    gemm(m, n, k, g.data(), false, b.data(), true, ga.data_mut(), false);
    gemm(k, m, n, a.data(), true, g.data(), false, gb.data_mut(), false);
    (ga, gb)
}

pub(crate) fn bmm_backward(g: &Tensor, a: &Tensor, b: &Tensor) -> (Tensor, Tensor) {
    let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    for i in 0..bs {
        let gi = &g.data()[i * m * n..(i + 1) * m * n];
        let ai = &a.data()[i * m * k..(i + 1) * m * k];
        let bi = &b.data()[i * k * n..(i + 1) * k * n];
        gemm(m, n, k, gi, false, bi, true, &mut ga.data_mut()[i * m * k..(i + 1) * m * k], false);
        gemm(k, m, n, ai, true, gi, false, &mut gb.data_mut()[i * k * n..(i + 1) * k * n], false);
    }
    (ga, gb)
}

impl<'t> Var<'t> {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros([m, n]);
        gemm(m, k, n, a.data(), false, b.data(), false, out.data_mut(), false);
        self.push(out, Op::Matmul(self.id, other.id))
    }

    /// Batched matrix product of `[s, m, k]` and `[s, k, n]`.
    pub fn bmm(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1] {
            return Err(Error::shape("bmm", a.shape(), b.shape()));
        }
        let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
        let mut out = Tensor::zeros([bs, m, n]);
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..(i + 1) * m * k],
                false,
                &b.data()[i * k * n..(i + 1) * k * n],
                false,
                &mut out.data_mut()[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        self.push(out, Op::Bmm(self.id, other.id))
    }

    /// Transpose of a matrix, or of the last two axes of a rank-3 tensor.
    pub fn t(self) -> Result<Var<'t>> {
        match self.shape().len() {
            2 => self.permute(&[1, 0]),
            3 => self.permute(&[0, 2, 1]),
            _ => Err(Error::shape("transpose", &self.shape(), &[])),
        }
    }
}
