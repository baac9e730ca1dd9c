use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Op, Var};

/// Stride, zero padding and group count of a 2-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Conv2dSpec {
            stride,
            padding,
            groups,
        }
    }
}

struct Geometry {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    cg: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(x: &[usize], k: &[usize], spec: &Conv2dSpec) -> Result<Self> {
        if x.len() != 4 || k.len() != 4 {
            return Err(Error::shape("conv2d", x, k));
        }
        let (b, c, h, w) = (x[0], x[1], x[2], x[3]);
        let (o, cg, kh, kw) = (k[0], k[1], k[2], k[3]);
        let g = spec.groups;
        if g == 0 || c % g != 0 || o % g != 0 {
            return Err(Error::Config(format!(
                "conv2d: groups={g} must divide input channels {c} and output channels {o}"
            )));
        }
        if spec.stride == 0 {
            return Err(Error::Config("conv2d: stride must be >= 1".into()));
        }
        if cg != c / g {
            return Err(Error::shape("conv2d", x, k));
        }
        let (ph, pw) = (h + 2 * spec.padding, w + 2 * spec.padding);
        if ph < kh || pw < kw {
            return Err(Error::shape("conv2d", x, k));
        }
        Ok(Geometry {
            b,
            c,
            h,
            w,
            o,
            cg,
            kh,
            kw,
            oh: (ph - kh) / spec.stride + 1,
            ow: (pw - kw) / spec.stride + 1,
        })
    }

    /// Output columns `ox` whose input column `ox*s + kx - p` is in bounds.
    fn valid_cols(&self, kx: usize, spec: &Conv2dSpec) -> std::ops::Range<usize> {
        valid_range(kx, spec.padding, spec.stride, self.w, self.ow)
    }

    fn valid_rows(&self, ky: usize, spec: &Conv2dSpec) -> std::ops::Range<usize> {
        valid_range(ky, spec.padding, spec.stride, self.h, self.oh)
    }
}

fn valid_range(k: usize, pad: usize, stride: usize, size: usize, out: usize) -> std::ops::Range<usize> {
    // need 0 <= o*stride + k - pad < size
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if size + pad > k {
        ((size + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    lo..hi.max(lo)
}

fn conv2d_forward(x: &Tensor, k: &Tensor, spec: &Conv2dSpec) -> Result<Tensor> {
    let gm = Geometry::new(x.shape(), k.shape(), spec)?;
    let og = gm.o / spec.groups;
    let mut out = Tensor::zeros([gm.b, gm.o, gm.oh, gm.ow]);
    let (xd, kd) = (x.data(), k.data());
    let od = out.data_mut();
    let s = spec.stride;
    for b in 0..gm.b {
        for o in 0..gm.o {
            let group = o / og;
            let out_plane = &mut od[(b * gm.o + o) * gm.oh * gm.ow..(b * gm.o + o + 1) * gm.oh * gm.ow];
            for ci in 0..gm.cg {
                let c = group * gm.cg + ci;
                let in_plane = &xd[(b * gm.c + c) * gm.h * gm.w..(b * gm.c + c + 1) * gm.h * gm.w];
                for ky in 0..gm.kh {
                    for kx in 0..gm.kw {
                        let wgt = kd[((o * gm.cg + ci) * gm.kh + ky) * gm.kw + kx];
                        if wgt == 0.0 {
                            continue;
                        }
                        let cols = gm.valid_cols(kx, spec);
                        for oy in gm.valid_rows(ky, spec) {
                            let iy = oy * s + ky - spec.padding;
                            let row = &in_plane[iy * gm.w..(iy + 1) * gm.w];
                            let orow = &mut out_plane[oy * gm.ow..(oy + 1) * gm.ow];
                            for ox in cols.clone() {
                                orow[ox] += wgt * row[ox * s + kx - spec.padding];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn conv2d_backward(g: &Tensor, x: &Tensor, k: &Tensor, spec: &Conv2dSpec) -> (Tensor, Tensor) {
    let gm = Geometry::new(x.shape(), k.shape(), spec).expect("validated in forward");
    let og = gm.o / spec.groups;
    let mut gx = Tensor::zeros(x.shape());
    let mut gk = Tensor::zeros(k.shape());
    let (xd, kd, gd) = (x.data(), k.data(), g.data());
    let s = spec.stride;
    let gxd = gx.data_mut();
    let gkd = gk.data_mut();
    for b in 0..gm.b {
        for o in 0..gm.o {
            let group = o / og;
            let g_plane = &gd[(b * gm.o + o) * gm.oh * gm.ow..(b * gm.o + o + 1) * gm.oh * gm.ow];
            for ci in 0..gm.cg {
                let c = group * gm.cg + ci;
                let base = (b * gm.c + c) * gm.h * gm.w;
                for ky in 0..gm.kh {
                    for kx in 0..gm.kw {
                        let kidx = ((o * gm.cg + ci) * gm.kh + ky) * gm.kw + kx;
                        let wgt = kd[kidx];
                        let cols = gm.valid_cols(kx, spec);
                        let mut acc = 0.0;
                        for oy in gm.valid_rows(ky, spec) {
                            let iy = oy * s + ky - spec.padding;
                            let grow = &g_plane[oy * gm.ow..(oy + 1) * gm.ow];
                            let row_off = base + iy * gm.w;
                            for ox in cols.clone() {
                                let ix = row_off + ox * s + kx - spec.padding;
                                acc += grow[ox] * xd[ix];
                                gxd[ix] += grow[ox] * wgt;
                            }
                        }
                        gkd[kidx] += acc;
                    }
                }
            }
        }
    }
    (gx, gk)
}

impl<'t> Var<'t> {
    /// Grouped 2-D cross-correlation of `[B, C, H, W]` with a
    /// `[O, C/groups, kH, kW]` kernel. No bias.
    pub fn conv2d(self, kernel: Var<'t>, spec: Conv2dSpec) -> Result<Var<'t>> {
        self.same_tape(&kernel)?;
        let out = conv2d_forward(&self.value(), &kernel.value(), &spec)?;
        self.push(
            out,
            Op::Conv2d {
                x: self.id,
                kernel: kernel.id,
                spec,
            },
        )
    }

    /// Mean over the spatial axes of `[B, C, H, W]`, giving `[B, C]`.
    pub fn global_avg_pool(self) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape("global_avg_pool", &s, &[]));
        }
        self.reshape(&[s[0], s[1], s[2] * s[3]])?.mean_axis(2, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn valid_range_matches_brute_force() {
        for pad in 0..3 {
            for stride in 1..4 {
                for size in 1..7 {
                    for k in 0..4 {
                        if size + 2 * pad < k + 1 {
                            continue;
                        }
                        let out = (size + 2 * pad - (k + 1)) / stride + 1;
                        let brute: Vec<usize> = (0..out)
                            .filter(|&o| {
                                let i = (o * stride + k) as isize - pad as isize;
                                i >= 0 && (i as usize) < size
                            })
                            .collect();
                        let r: Vec<usize> = valid_range(k, pad, stride, size, out).collect();
                        assert_eq!(r, brute, "k={k} pad={pad} stride={stride} size={size}");
                    }
                }
            }
        }
    }

    #[test]
    fn constant_field_with_ones_kernel() {
        let tape = Tape::new();
        let c = 3;
        let x = tape.constant(Tensor::full([1, c, 5, 5], 2.0));
        let k = tape.constant(Tensor::ones([1, c, 3, 3]));
        let y = x.conv2d(k, Conv2dSpec::new(1, 1, 1)).unwrap().value();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
        for i in 1..4 {
            for j in 1..4 {
                assert_eq!(y.at(&[0, 0, i, j]), 9.0 * c as f64 * 2.0);
            }
        }
        // corner sees a 2x2 window
        assert_eq!(y.at(&[0, 0, 0, 0]), 4.0 * c as f64 * 2.0);
    }

    #[test]
    fn indivisible_groups_is_config_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 3, 4, 4]));
        let k = tape.constant(Tensor::zeros([4, 1, 1, 1]));
        assert!(matches!(x.conv2d(k, Conv2dSpec::new(1, 0, 2)), Err(Error::Config(_))));
    }

    #[test]
    fn strided_output_size() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros([2, 2, 7, 6]));
        let k = tape.constant(Tensor::zeros([4, 2, 3, 3]));
        let y = x.conv2d(k, Conv2dSpec::new(2, 1, 1)).unwrap();
        assert_eq!(y.shape(), vec![2, 4, 4, 3]);
    }
}
