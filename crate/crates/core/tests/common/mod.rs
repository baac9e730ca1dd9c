//! Brute-force reference implementations shared by the integration tests.
//! Nothing here calls into the library's numerical kernels.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sckansformer::attention::Msa;
use sckansformer::autodiff::{Conv2dSpec, Tape};
use sckansformer::kan::{KanLayer, SplineGrid};
use sckansformer::scconv::{Cru, Sru};
use sckansformer::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, r)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * m + j];
            }
            out[i * m + j] = s;
        }
    }
    out
}

/// Direct cross-correlation with zero padding.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize, groups: usize) -> Tensor {
    let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, cg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(cg * groups, c);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let og = o / groups;
    let mut out = Tensor::zeros([b, o, oh, ow]);
    for bi in 0..b {
        for oc in 0..o {
            let g = oc / og;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..cg {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (xx * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                s += x.at(&[bi, g * cg + ci, iy as usize, ix as usize]) * w.at(&[oc, ci, dy, dx]);
                            }
                        }
                    }
                    out.set(&[bi, oc, y, xx], s);
                }
            }
        }
    }
    out
}

/// Two-pass mean and biased variance per (sample, group).
pub fn group_norm(x: &Tensor, groups: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Tensor {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let cg = c / groups;
    let mut out = Tensor::zeros(x.shape());
    for bi in 0..b {
        for g in 0..groups {
            let mut vals = Vec::new();
            for ch in g * cg..(g + 1) * cg {
                for i in 0..h {
                    for j in 0..w {
                        vals.push(x.at(&[bi, ch, i, j]));
                    }
                }
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            for ch in g * cg..(g + 1) * cg {
                for i in 0..h {
                    for j in 0..w {
                        let v = (x.at(&[bi, ch, i, j]) - mean) / (var + eps).sqrt();
                        out.set(&[bi, ch, i, j], gamma[ch] * v + beta[ch]);
                    }
                }
            }
        }
    }
    out
}

/// Row-by-row scaled dot-product attention on `[n, d]` row-major slices.
pub fn attention(q: &[f64], k: &[f64], v: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let mut scores = vec![0.0; n];
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..d {
                s += q[i * d + p] * k[j * d + p];
            }
            scores[j] = s / (d as f64).sqrt();
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for j in 0..n {
            for p in 0..d {
                out[i * d + p] += exps[j] / total * v[j * d + p];
            }
        }
    }
    out
}

fn columns(x: &[f64], n: usize, d: usize, from: usize, width: usize) -> Vec<f64> {
    (0..n).flat_map(|i| (from..from + width).map(move |j| (i, j))).map(|(i, j)| x[i * d + j]).collect()
}

/// Slice every head out of the projections, attend, and stitch back.
pub fn msa(msa: &Msa, x: &[f64], n: usize) -> Vec<f64> {
    let d = msa.d_model;
    let dh = d / msa.heads;
    let q = matmul(x, msa.wq.value().data(), n, d, d);
    let k = matmul(x, msa.wk.value().data(), n, d, d);
    let v = matmul(x, msa.wv.value().data(), n, d, d);
    let mut merged = vec![0.0; n * d];
    for h in 0..msa.heads {
        let o = attention(
            &columns(&q, n, d, h * dh, dh),
            &columns(&k, n, d, h * dh, dh),
            &columns(&v, n, d, h * dh, dh),
            n,
            dh,
        );
        for i in 0..n {
            for j in 0..dh {
                merged[i * d + h * dh + j] = o[i * dh + j];
            }
        }
    }
    matmul(&merged, msa.wo.value().data(), n, d, d)
}

/// Knots `lo + (j - k) h` for `j = 0..=G + 2k`.
pub fn knots(lo: f64, hi: f64, intervals: usize, order: usize) -> Vec<f64> {
    let h = (hi - lo) / intervals as f64;
    (0..=intervals + 2 * order)
        .map(|j| lo + (j as f64 - order as f64) * h)
        .collect()
}

/// Textbook recursive Cox–de Boor.
pub fn cox_de_boor(t: &[f64], j: usize, degree: usize, x: f64) -> f64 {
    if degree == 0 {
        return if t[j] <= x && x < t[j + 1] { 1.0 } else { 0.0 };
    }
    let left = (x - t[j]) / (t[j + degree] - t[j]) * cox_de_boor(t, j, degree - 1, x);
    let right = (t[j + degree + 1] - x) / (t[j + degree + 1] - t[j + 1]) * cox_de_boor(t, j + 1, degree - 1, x);
    left + right
}

/// `y_q = Σ_p w_qp silu(x_p) + Σ_p Σ_m c_qpm B_m(x_p)`, one edge at a time.
pub fn kan_layer(layer: &KanLayer, x: &Tensor) -> Tensor {
    let g = &layer.grid;
    let t = knots(g.lo(), g.hi(), g.intervals(), g.order());
    let nb = g.intervals() + g.order();
    let (rows, n_in, n_out) = (x.shape()[0], layer.n_in, layer.n_out);
    let c = layer.spline.value();
    let w = layer.base_weight.value();
    let mut out = Tensor::zeros([rows, n_out]);
    for r in 0..rows {
        for q in 0..n_out {
            let mut y = 0.0;
            for p in 0..n_in {
                let xv = x.at(&[r, p]);
                let mut phi = w.at(&[q, p]) * xv * sigmoid(xv);
                for m in 0..nb {
                    phi += c.at(&[q, p, m]) * cox_de_boor(&t, m, g.order(), xv);
                }
                y += phi;
            }
            out.set(&[r, q], y);
        }
    }
    out
}

pub struct SruOracle {
    pub mask: Tensor,
    pub informative: Tensor,
    pub redundant: Tensor,
    pub output: Tensor,
}

pub fn sru(sru: &Sru, x: &Tensor) -> SruOracle {
    let gamma = sru.gamma.value().data().to_vec();
    let beta = sru.beta.value().data().to_vec();
    let gn = group_norm(x, sru.groups, &gamma, &beta, sru.eps);
    let total: f64 = gamma.iter().sum();
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut mask = Tensor::zeros(x.shape());
    let mut x1 = Tensor::zeros(x.shape());
    let mut x2 = Tensor::zeros(x.shape());
    for bi in 0..b {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let idx = [bi, ch, i, j];
                    let gate = sigmoid(gamma[ch] / total * gn.at(&idx));
                    let m = if gate > sru.threshold { 1.0 } else { 0.0 };
                    mask.set(&idx, m);
                    x1.set(&idx, m * x.at(&idx));
                    x2.set(&idx, (1.0 - m) * x.at(&idx));
                }
            }
        }
    }
    let half = c / 2;
    let mut out = Tensor::zeros(x.shape());
    for bi in 0..b {
        for ch in 0..c {
            let partner = if ch < half { ch + half } else { ch - half };
            for i in 0..h {
                for j in 0..w {
                    out.set(&[bi, ch, i, j], x1.at(&[bi, ch, i, j]) + x2.at(&[bi, partner, i, j]));
                }
            }
        }
    }
    SruOracle {
        mask,
        informative: x1,
        redundant: x2,
        output: out,
    }
}

fn channels(x: &Tensor, from: usize, to: usize) -> Tensor {
    let (b, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let mut out = Tensor::zeros([b, to - from, h, w]);
    for bi in 0..b {
        for ch in from..to {
            for i in 0..h {
                for j in 0..w {
                    out.set(&[bi, ch - from, i, j], x.at(&[bi, ch, i, j]));
                }
            }
        }
    }
    out
}

fn stack_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, ca, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    let cb = b.shape()[1];
    let mut out = Tensor::zeros([n, ca + cb, h, w]);
    for bi in 0..n {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..ca {
                    out.set(&[bi, ch, i, j], a.at(&[bi, ch, i, j]));
                }
                for ch in 0..cb {
                    out.set(&[bi, ca + ch, i, j], b.at(&[bi, ch, i, j]));
                }
            }
        }
    }
    out
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap()
}

pub struct CruOracle {
    pub y1: Tensor,
    pub y2: Tensor,
    /// `[B, C]` weight of `y1`; the weight of `y2` is its complement.
    pub beta1: Vec<Vec<f64>>,
    pub output: Tensor,
}

pub fn cru(cru: &Cru, x: &Tensor) -> CruOracle {
    let c = cru.channels;
    let x_up = conv2d(&channels(x, 0, cru.up), cru.sq_up.value(), 1, 0, 1);
    let x_low = conv2d(&channels(x, cru.up, c), cru.sq_low.value(), 1, 0, 1);
    let y1 = add(
        &conv2d(&x_up, cru.gwc.value(), 1, 1, cru.gwc_groups),
        &conv2d(&x_up, cru.pwc_up.value(), 1, 0, 1),
    );
    let y2 = stack_channels(&conv2d(&x_low, cru.pwc_low.value(), 1, 0, 1), &x_low);
    let (b, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let gap = |t: &Tensor, bi: usize, ch: usize| {
        let mut s = 0.0;
        for i in 0..h {
            for j in 0..w {
                s += t.at(&[bi, ch, i, j]);
            }
        }
        s / (h * w) as f64
    };
    let mut beta1 = vec![vec![0.0; c]; b];
    let mut out = Tensor::zeros(x.shape());
    for bi in 0..b {
        for ch in 0..c {
            let (s1, s2) = (gap(&y1, bi, ch), gap(&y2, bi, ch));
            let b1 = s1.exp() / (s1.exp() + s2.exp());
            beta1[bi][ch] = b1;
            for i in 0..h {
                for j in 0..w {
                    let idx = [bi, ch, i, j];
                    out.set(&idx, b1 * y1.at(&idx) + (1.0 - b1) * y2.at(&idx));
                }
            }
        }
    }
    CruOracle { y1, y2, beta1, output: out }
}

/// Worst absolute deviation of each library op from its oracle over
/// `instances` random problems.
pub fn oracle_equivalence(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut worst = vec![
        ("matmul", 0.0f64),
        ("conv2d", 0.0),
        ("group_norm", 0.0),
        ("attention", 0.0),
        ("msa", 0.0),
        ("kan_layer", 0.0),
        ("sru", 0.0),
        ("cru", 0.0),
    ];
    let mut bump = |name: &str, e: f64| {
        let slot = worst.iter_mut().find(|(n, _)| *n == name).unwrap();
        slot.1 = slot.1.max(e);
    };
    for _ in 0..instances {
        let tape = Tape::new();

        let (n, k, m) = (r.random_range(1..7), r.random_range(1..7), r.random_range(1..7));
        let (a, b) = (randn(&[n, k], &mut r), randn(&[k, m], &mut r));
        let got = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap().value();
        bump("matmul", max_abs_diff(got.data(), &matmul(a.data(), b.data(), n, k, m)));

        let groups = r.random_range(1..3);
        let cg = r.random_range(1..3);
        let og = r.random_range(1..3);
        let (stride, pad) = (r.random_range(1..3), r.random_range(0..2));
        let ksz = r.random_range(1..4);
        let hw = r.random_range(ksz..ksz + 4);
        let x = randn(&[2, groups * cg, hw, hw + 1], &mut r);
        let w = randn(&[groups * og, cg, ksz, ksz], &mut r);
        let got = tape
            .constant(x.clone())
            .conv2d(tape.constant(w.clone()), Conv2dSpec::new(stride, pad, groups))
            .unwrap()
            .value();
        bump("conv2d", max_abs_diff(got.data(), conv2d(&x, &w, stride, pad, groups).data()));

        let groups = r.random_range(1..4);
        let c = groups * r.random_range(1..3);
        let x = Tensor::randn([2, c, 3, 2], 2.0, &mut r);
        let gamma = randn(&[c], &mut r);
        let beta = randn(&[c], &mut r);
        let got = tape
            .constant(x.clone())
            .group_norm(groups, tape.constant(gamma.clone()), tape.constant(beta.clone()), 1e-5)
            .unwrap()
            .value();
        let want = group_norm(&x, groups, gamma.data(), beta.data(), 1e-5);
        bump("group_norm", max_abs_diff(got.data(), want.data()));

        let (n, d) = (r.random_range(1..7), r.random_range(1..6));
        let (q, k, v) = (randn(&[n, d], &mut r), randn(&[n, d], &mut r), randn(&[n, d], &mut r));
        let got = sckansformer::attention::attention(
            tape.constant(q.clone()),
            tape.constant(k.clone()),
            tape.constant(v.clone()),
        )
        .unwrap()
        .value();
        bump("attention", max_abs_diff(got.data(), &attention(q.data(), k.data(), v.data(), n, d)));

        let heads = r.random_range(1..4);
        let d = heads * r.random_range(1..4);
        let n = r.random_range(1..6);
        let layer = Msa::new("msa", d, heads, &mut r).unwrap();
        let x = randn(&[n, d], &mut r);
        let got = layer.forward(&tape, tape.constant(x.clone())).unwrap().value();
        bump("msa", max_abs_diff(got.data(), &msa(&layer, x.data(), n)));

        let grid = SplineGrid::new(-1.0, 1.0, r.random_range(1..7), r.random_range(0..4)).unwrap();
        let (n_in, n_out) = (r.random_range(1..4), r.random_range(1..4));
        let layer = KanLayer::new("kan", n_in, n_out, grid, &mut r);
        let x = Tensor::rand_uniform([5, n_in], -1.4, 1.4, &mut r);
        let got = layer.forward(&tape, tape.constant(x.clone())).unwrap().value();
        bump("kan_layer", max_abs_diff(got.data(), kan_layer(&layer, &x).data()));

        let groups = r.random_range(1..3);
        let c = 2 * groups * r.random_range(1..3);
        let mut s = Sru::new("sru", c, groups, 0.5).unwrap();
        *s.gamma.value_mut() = Tensor::rand_uniform([c], 0.2, 2.0, &mut r);
        *s.beta.value_mut() = Tensor::randn([c], 0.5, &mut r);
        let x = randn(&[2, c, 3, 3], &mut r);
        let got = s.forward(&tape, tape.constant(x.clone())).unwrap().value();
        bump("sru", max_abs_diff(got.data(), sru(&s, &x).output.data()));

        let (c, g) = [(4usize, 1usize), (8, 2), (12, 1), (16, 4)][r.random_range(0..4)];
        let layer = Cru::new("cru", c, 0.5, 2, g, &mut r).unwrap();
        let x = randn(&[2, c, 3, 4], &mut r);
        let got = layer.forward(&tape, tape.constant(x.clone())).unwrap().value();
        bump("cru", max_abs_diff(got.data(), cru(&layer, &x).output.data()));
    }
    worst
}

/// Scores recomputed by walking every (truth, prediction) pair and counting
/// TP/FP/FN per class.
pub struct MetricsTally {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

pub fn metrics_tally(rows: &[Vec<u64>]) -> MetricsTally {
    let k = rows.len();
    let mut pairs = Vec::new();
    for (t, row) in rows.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((t, p), n as usize));
        }
    }
    let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut precision, mut recall, mut f1) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..k {
        let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
        for &(t, p) in &pairs {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                (false, false) => {}
            }
        }
        let (pr, re) = (div(tp, tp + fp), div(tp, tp + fneg));
        precision.push(pr);
        recall.push(re);
        f1.push(if pr + re == 0.0 { 0.0 } else { 2.0 * pr * re / (pr + re) });
    }
    let correct = pairs.iter().filter(|(t, p)| t == p).count() as u64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
    MetricsTally {
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        accuracy: div(correct, pairs.len() as u64),
        precision,
        recall,
        f1,
    }
}

fn layer_norm_rows(x: &[f64], d: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(d).zip(out.chunks_mut(d)) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        for j in 0..d {
            o[j] = (row[j] - mean) / (var + eps).sqrt() * gamma[j] + beta[j];
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn affine(x: &[f64], n: usize, lin: &sckansformer::nn::Linear) -> Vec<f64> {
    let w = lin.weight.value();
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    let mut y = matmul(x, w.data(), n, d_in, d_out);
    if let Some(b) = &lin.bias {
        for row in y.chunks_mut(d_out) {
            for (v, bb) in row.iter_mut().zip(b.value().data()) {
                *v += bb;
            }
        }
    }
    y
}

/// Logits of a plain patch-embedding + (MSA, MLP) encoder, evaluated with
/// loops over the parameters of `model`. `model` must have SCConv, GLAE and
/// KAN disabled.
pub fn plain_encoder(model: &sckansformer::model::SCKansformer, images: &Tensor) -> Vec<f64> {
    use sckansformer::model::FeedForward;
    let c = &model.config;
    assert!(model.scconv.is_none() && model.glae.is_empty());
    let (p, d, ch) = (c.patch_size, c.hidden, c.channels);
    let (gh, gw) = (c.image_h / p, c.image_w / p);
    let n = gh * gw + 1;
    let mut logits = Vec::new();
    for b in 0..images.shape()[0] {
        let mut flat = Vec::with_capacity((n - 1) * p * p * ch);
        for gy in 0..gh {
            for gx in 0..gw {
                for py in 0..p {
                    for px in 0..p {
                        for cc in 0..ch {
                            flat.push(images.at(&[b, cc, gy * p + py, gx * p + px]));
                        }
                    }
                }
            }
        }
        let patches = matmul(&flat, model.patch_proj.value().data(), n - 1, p * p * ch, d);
        let mut z: Vec<f64> = model.cls.value().data().iter().chain(&patches).copied().collect();
        for (v, pos) in z.iter_mut().zip(model.pos.value().data()) {
            *v += pos;
        }
        for block in &model.blocks {
            let ln = &block.ln1;
            let h = layer_norm_rows(&z, d, ln.gamma.value().data(), ln.beta.value().data(), ln.eps);
            for (v, a) in z.iter_mut().zip(msa(&block.msa, &h, n)) {
                *v += a;
            }
            let FeedForward::Mlp(mlp) = &block.ffn else {
                panic!("expected an MLP feed-forward");
            };
            let ln = &block.ln2;
            let h = layer_norm_rows(&z, d, ln.gamma.value().data(), ln.beta.value().data(), ln.eps);
            let hidden: Vec<f64> = affine(&h, n, &mlp.fc1).into_iter().map(gelu).collect();
            for (v, m) in z.iter_mut().zip(affine(&hidden, n, &mlp.fc2)) {
                *v += m;
            }
        }
        let ln = &model.norm;
        let z = layer_norm_rows(&z[..d], d, ln.gamma.value().data(), ln.beta.value().data(), ln.eps);
        logits.extend(affine(&z, 1, &model.head));
    }
    logits
}
