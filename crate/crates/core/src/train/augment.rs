//! Image preprocessing on `[C, H, W]` tensors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims(img: &Tensor) -> (usize, usize, usize) {
    let s = img.shape();
    (s[0], s[1], s[2])
}

/// Bilinear resize with corner pixels aligned, so linear ramps stay linear
/// and equal sizes give the identity.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = dims(img);
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out <= 1 || n_in <= 1 {
            return (0, 0, 0.0);
        }
        let src = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (src.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, src - lo as f64)
    };
    let d = img.data();
    Tensor::from_fn([c, out_h, out_w], |i| {
        let (ch, y, x) = (i / (out_h * out_w), (i / out_w) % out_h, i % out_w);
        let (y0, y1, fy) = coord(y, out_h, h);
        let (x0, x1, fx) = coord(x, out_w, w);
        let at = |yy: usize, xx: usize| d[(ch * h + yy) * w + xx];
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

pub fn crop(img: &Tensor, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
    let (c, ih, iw) = dims(img);
    if top + h > ih || left + w > iw {
        return Err(Error::Contract(format!(
            "crop {h}x{w} at ({top}, {left}) exceeds a {ih}x{iw} image"
        )));
    }
    let d = img.data();
    Ok(Tensor::from_fn([c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        d[(ch * ih + top + y) * iw + left + x]
    }))
}

pub fn center_crop(img: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (_, ih, iw) = dims(img);
    if h > ih || w > iw {
        return Err(Error::Contract(format!("center crop {h}x{w} exceeds a {ih}x{iw} image")));
    }
    crop(img, (ih - h) / 2, (iw - w) / 2, h, w)
}

/// Zero padding on all four sides.
pub fn pad(img: &Tensor, p: usize) -> Tensor {
    if p == 0 {
        return img.clone();
    }
    let (c, h, w) = dims(img);
    let (oh, ow) = (h + 2 * p, w + 2 * p);
    let d = img.data();
    Tensor::from_fn([c, oh, ow], |i| {
        let (ch, y, x) = (i / (oh * ow), (i / ow) % oh, i % ow);
        if y < p || x < p || y >= h + p || x >= w + p {
            0.0
        } else {
            d[(ch * h + y - p) * w + x - p]
        }
    })
}

pub fn flip_horizontal(img: &Tensor) -> Tensor {
    let (c, h, w) = dims(img);
    let d = img.data();
    Tensor::from_fn([c, h, w], |i| {
        let (row, x) = (i / w, i % w);
        d[row * w + (w - 1 - x)]
    })
}

/// Geometry of the train/eval pipelines: resize to `resize` square, then a
/// `crop` square (random for training, centred for evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub resize: usize,
    pub crop: usize,
    pub padding: usize,
    pub flip_prob: f64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            resize: 40,
            crop: 32,
            padding: 0,
            flip_prob: 0.5,
        }
    }
}

impl Preprocess {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.resize {
            return Err(Error::Config(format!(
                "crop {} must be positive and no larger than resize {}",
                self.crop, self.resize
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        Ok(())
    }

    fn to_square(&self, img: &Tensor) -> Tensor {
        resize_bilinear(img, self.resize, self.resize)
    }

    /// Resize, optional zero padding, random crop and random horizontal flip.
    pub fn augment_train<R: Rng + ?Sized>(&self, img: &Tensor, rng: &mut R) -> Result<Tensor> {
        let padded = pad(&self.to_square(img), self.padding);
        let (_, h, w) = dims(&padded);
        if h < self.crop || w < self.crop {
            return Err(Error::Contract(format!(
                "a {h}x{w} image cannot be cropped to {}",
                self.crop
            )));
        }
        let top = rng.random_range(0..=h - self.crop);
        let left = rng.random_range(0..=w - self.crop);
        let out = crop(&padded, top, left, self.crop, self.crop)?;
        Ok(if rng.random_bool(self.flip_prob) { flip_horizontal(&out) } else { out })
    }

    /// Resize then centre crop.
    pub fn preprocess_eval(&self, img: &Tensor) -> Result<Tensor> {
        center_crop(&self.to_square(img), self.crop, self.crop)
    }
}

/// Per-channel standardization with statistics from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(channels: usize) -> Self {
        Normalizer {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn fit(images: &[Tensor]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Data("no images to fit normalization".into()))?;
        let c = first.shape()[0];
        let mut sum = vec![0.0; c];
        let mut count = vec![0usize; c];
        for img in images {
            let plane = img.numel() / c;
            for (ch, chunk) in img.data().chunks(plane).enumerate() {
                sum[ch] += chunk.iter().sum::<f64>();
                count[ch] += plane;
            }
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
        let mut sq = vec![0.0; c];
        for img in images {
            let plane = img.numel() / c;
            for (ch, chunk) in img.data().chunks(plane).enumerate() {
                sq[ch] += chunk.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let std = sq.iter().zip(&count).map(|(s, &n)| (s / n as f64).sqrt().max(1e-6)).collect();
        Ok(Normalizer { mean, std })
    }

    pub fn apply(&self, img: &Tensor) -> Tensor {
        let c = self.mean.len();
        let plane = img.numel() / c.max(1);
        Tensor::from_fn(img.shape(), |i| {
            let ch = i / plane;
            (img.data()[i] - self.mean[ch]) / self.std[ch]
        })
    }
}
