use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::Tensor;

use super::{Op, Var};

/// Which elements are standardized together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormGroups {
    /// Consecutive runs of `size` elements (layer norm, group norm).
    Contiguous { size: usize },
    /// Per channel of a `[B, C, inner..]` layout (batch norm).
    Channel { channels: usize, inner: usize },
}

impl NormGroups {
    fn count(self, numel: usize) -> usize {
        match self {
            NormGroups::Contiguous { size } => numel / size,
            NormGroups::Channel { channels, .. } => channels,
        }
    }

    #[inline]
    fn of(self, idx: usize) -> usize {
        match self {
            NormGroups::Contiguous { size } => idx / size,
            NormGroups::Channel { channels, inner } => (idx / inner) % channels,
        }
    }
}

/// Per-group mean and biased variance, two-pass.
pub fn group_moments(x: &Tensor, groups: NormGroups) -> (Vec<f64>, Vec<f64>) {
    let n = groups.count(x.numel());
    let mut mean = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (i, &v) in x.data().iter().enumerate() {
        let g = groups.of(i);
        mean[g] += v;
        count[g] += 1;
    }
    for (m, &c) in mean.iter_mut().zip(&count) {
        *m /= c as f64;
    }
    let mut var = vec![0.0; n];
    for (i, &v) in x.data().iter().enumerate() {
        let g = groups.of(i);
        let d = v - mean[g];
        var[g] += d * d;
    }
    for (s, &c) in var.iter_mut().zip(&count) {
        *s /= c as f64;
    }
    (mean, var)
}

pub(crate) fn standardize_backward(g: &Tensor, xhat: &Tensor, groups: NormGroups, rstd: &[f64]) -> Tensor {
    let n = rstd.len();
    let mut mean_g = vec![0.0; n];
    let mut mean_gx = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (i, (&gv, &xv)) in g.data().iter().zip(xhat.data()).enumerate() {
        let k = groups.of(i);
        mean_g[k] += gv;
        mean_gx[k] += gv * xv;
        count[k] += 1;
    }
    for k in 0..n {
        mean_g[k] /= count[k] as f64;
        mean_gx[k] /= count[k] as f64;
    }
    let data = g
        .data()
        .iter()
        .zip(xhat.data())
        .enumerate()
        .map(|(i, (&gv, &xv))| {
            let k = groups.of(i);
            rstd[k] * (gv - mean_g[k] - xv * mean_gx[k])
        })
        .collect();
    Tensor::new(g.shape(), data).expect("shape preserved")
}

/// Running averages tracked by batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
    /// Batches folded in during the current calibration pass.
    pub calibration_batches: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros([channels]),
            var: Tensor::ones([channels]),
            calibration_batches: 0,
        }
    }
}

pub const BN_MOMENTUM: f64 = 0.1;

impl<'t> Var<'t> {
    /// `(x - mean) / sqrt(var + eps)` within each group, biased variance.
    pub fn standardize(self, groups: NormGroups, eps: f64) -> Result<Var<'t>> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("normalization eps must be > 0, got {eps}")));
        }
        let x = self.value();
        let (mean, var) = group_moments(&x, groups);
        let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let k = groups.of(i);
                (v - mean[k]) * rstd[k]
            })
            .collect();
        self.push(
            Tensor::new(x.shape(), data)?,
            Op::Standardize {
                x: self.id,
                groups,
                rstd,
            },
        )
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta` of
    /// that axis' length.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let shape = self.shape();
        let d = *shape.last().ok_or_else(|| Error::shape("layer_norm", &shape, &[]))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape("layer_norm", &shape, &gamma.shape()));
        }
        self.standardize(NormGroups::Contiguous { size: d }, eps)?
            .mul(gamma)?
            .add(beta)
    }

    /// Group normalization of `[B, C, H, W]` with per-channel affine.
    pub fn group_norm(self, groups: usize, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(Error::shape("group_norm", &shape, &[]));
        }
        let c = shape[1];
        if groups == 0 || c % groups != 0 {
            return Err(Error::Config(format!(
                "group_norm: {c} channels not divisible into {groups} groups"
            )));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape("group_norm", &shape, &gamma.shape()));
        }
        let size = (c / groups) * shape[2] * shape[3];
        let affine = [c, 1, 1];
        self.standardize(NormGroups::Contiguous { size }, eps)?
            .mul(gamma.reshape(&affine)?)?
            .add(beta.reshape(&affine)?)
    }

    /// Batch normalization of `[B, C, ...]`. Training mode normalizes with
    /// batch statistics and folds them into `stats` with momentum
    /// [`BN_MOMENTUM`]; eval mode uses `stats` as constants.
    pub fn batch_norm(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        stats: &mut RunningStats,
        mode: Mode,
        eps: f64,
    ) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() < 2 {
            return Err(Error::shape("batch_norm", &shape, &[]));
        }
        let c = shape[1];
        if gamma.shape() != [c] || beta.shape() != [c] || stats.mean.shape() != [c] {
            return Err(Error::shape("batch_norm", &shape, &gamma.shape()));
        }
        let inner: usize = shape[2..].iter().product();
        let mut affine = vec![c];
        affine.extend(std::iter::repeat_n(1, shape.len() - 2));
        let normalized = match mode {
            Mode::Train | Mode::Calibrate => {
                if shape[0] < 2 {
                    return Err(Error::Contract(format!(
                        "batch_norm in training mode needs batch >= 2, got {}",
                        shape[0]
                    )));
                }
                let groups = NormGroups::Channel { channels: c, inner };
                let (mean, var) = group_moments(&self.value(), groups);
                let n = (shape[0] * inner) as f64;
                let momentum = if mode == Mode::Calibrate {
                    stats.calibration_batches += 1;
                    1.0 / stats.calibration_batches as f64
                } else {
                    BN_MOMENTUM
                };
                for k in 0..c {
                    let unbiased = var[k] * n / (n - 1.0);
                    let m = &mut stats.mean.data_mut()[k];
                    *m = (1.0 - momentum) * *m + momentum * mean[k];
                    let v = &mut stats.var.data_mut()[k];
                    *v = (1.0 - momentum) * *v + momentum * unbiased;
                }
                self.standardize(groups, eps)?
            }
            Mode::Eval => {
                let tape = self.tape();
                let mean = tape.constant(stats.mean.reshape(affine.clone())?);
                let rstd = tape.constant(stats.var.map(|v| 1.0 / (v + eps).sqrt()).reshape(affine.clone())?);
                self.sub(mean)?.mul(rstd)?
            }
        };
        normalized.mul(gamma.reshape(&affine)?)?.add(beta.reshape(&affine)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn constant_input_group_norm_gives_beta() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full([2, 4, 3, 3], 7.5));
        let gamma = tape.leaf(Tensor::full([4], 2.0));
        let beta = tape.leaf(Tensor::new([4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let y = x.group_norm(2, gamma, beta, 1e-5).unwrap();
        let y = y.value();
        for b in 0..2 {
            for c in 0..4 {
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((y.at(&[b, c, i, j]) - 0.1 * (c + 1) as f64).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn group_norm_rejects_indivisible_channels() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([1, 3, 2, 2]));
        let g = tape.leaf(Tensor::ones([3]));
        let b = tape.leaf(Tensor::zeros([3]));
        assert!(matches!(x.group_norm(2, g, b, 1e-5), Err(Error::Config(_))));
    }

    #[test]
    fn batch_norm_updates_running_stats_and_needs_two_samples() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new([2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let g = tape.leaf(Tensor::ones([1]));
        let b = tape.leaf(Tensor::zeros([1]));
        let mut stats = RunningStats::new(1);
        x.batch_norm(g, b, &mut stats, Mode::Train, 1e-5).unwrap();
        // mean 4, unbiased var 20/3
        assert!((stats.mean.item() - 0.4).abs() < 1e-12);
        assert!((stats.var.item() - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);

        let single = tape.leaf(Tensor::zeros([1, 1, 1, 2]));
        assert!(matches!(
            single.batch_norm(g, b, &mut stats, Mode::Train, 1e-5),
            Err(Error::Contract(_))
        ));
        assert!(single.batch_norm(g, b, &mut stats, Mode::Eval, 1e-5).is_ok());
    }

    #[test]
    fn calibration_averages_batch_statistics_exactly() {
        let tape = Tape::new();
        let g = tape.constant(Tensor::ones([1]));
        let b = tape.constant(Tensor::zeros([1]));
        let mut stats = RunningStats::new(1);
        stats.mean = Tensor::full([1], 100.0);
        for data in [vec![1.0, 3.0], vec![5.0, 9.0]] {
            let x = tape.constant(Tensor::new([2, 1], data).unwrap());
            x.batch_norm(g, b, &mut stats, Mode::Calibrate, 1e-5).unwrap();
        }
        // Batch means 2 and 7; unbiased variances 2 and 8.
        assert_eq!(stats.mean.item(), 4.5);
        assert_eq!(stats.var.item(), 5.0);
        assert_eq!(stats.calibration_batches, 2);
    }
}
