use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Explicit per-class counts; overrides `num_classes` and `samples_per_class`.
    pub longtail: Option<Vec<usize>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 8,
            samples_per_class: 64,
            image_size: 40,
            seed: 0,
            longtail: None,
        }
    }
}

impl SynthConfig {
    pub fn counts(&self) -> Vec<usize> {
        match &self.longtail {
            Some(c) => c.clone(),
            None => vec![self.samples_per_class; self.num_classes],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = self.counts();
        if counts.is_empty() || counts.contains(&0) {
            return Err(Error::Config("every synthetic class needs at least one sample".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!("image size {} is below the minimum of 8", self.image_size)));
        }
        Ok(())
    }
}

/// Shape and colour bands of one class.
#[derive(Debug, Clone, Copy)]
struct CellStyle {
    cyto_radius: f64,
    nucleus_frac: f64,
    elongation: f64,
    angle: f64,
    nucleus_rgb: [f64; 3],
    cyto_rgb: [f64; 3],
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match h6 as usize % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn style(class: usize, size: usize) -> CellStyle {
    let scale = size as f64 / 40.0;
    let hue = (class as f64 * 0.381_966).fract();
    CellStyle {
        cyto_radius: scale * (8.0 + ((class * 3) % 5) as f64),
        nucleus_frac: 0.35 + 0.1 * (class % 4) as f64,
        elongation: 1.0 + 0.25 * ((class / 2) % 3) as f64,
        angle: PI * (class as f64 * 0.618_034).fract(),
        nucleus_rgb: hsv(hue, 0.65, 0.55),
        cyto_rgb: hsv(hue + 0.5, 0.3, 0.85),
    }
}

fn coverage(signed_inside: f64) -> f64 {
    (signed_inside + 0.5).clamp(0.0, 1.0)
}

fn render<R: Rng + ?Sized>(st: &CellStyle, size: usize, rng: &mut R) -> Tensor {
    let noise = Normal::new(0.0, 0.03).expect("valid std");
    let mid = size as f64 / 2.0;
    let (cx, cy) = (mid + rng.random_range(-0.75..0.75), mid + rng.random_range(-0.75..0.75));
    let rc = st.cyto_radius * rng.random_range(0.97..1.03);
    let rn = rc * st.nucleus_frac * rng.random_range(0.97..1.03);
    let (a, b) = (rn * st.elongation.sqrt(), rn / st.elongation.sqrt());
    let theta = st.angle + rng.random_range(-0.2..0.2);
    let (sin, cos) = theta.sin_cos();
    let mut jitter = |c: [f64; 3]| c.map(|v| v + rng.random_range(-0.01..0.01));
    let nuc = jitter(st.nucleus_rgb);
    let cyto = jitter(st.cyto_rgb);
    let bg = jitter([0.92, 0.86, 0.88]);
    let brightness = rng.random_range(-0.01..0.01);

    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let ac = coverage(rc - dx.hypot(dy));
            let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
            let r = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
            let an = coverage((1.0 - r) * b);
            for c in 0..3 {
                let base = bg[c] * (1.0 - ac) + cyto[c] * ac;
                let px = base * (1.0 - an) + nuc[c] * an + brightness + noise.sample(rng);
                data[c * plane + y * size + x] = px.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new([3, size, size], data).expect("sized above")
}

/// Cell-like images: an elliptical nucleus inside a round cytoplasm on a
/// light background. Classes differ in radius, nucleus fraction, elongation
/// and hue; samples differ by position, size, orientation, colour and noise.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let counts = cfg.counts();
    let mut rng = substream(cfg.seed, "synth");
    let mut samples = Vec::with_capacity(counts.iter().sum());
    for (label, &n) in counts.iter().enumerate() {
        let st = style(label, cfg.image_size);
        for _ in 0..n {
            samples.push(Sample {
                image: render(&st, cfg.image_size, &mut rng),
                label,
            });
        }
    }
    let width = counts.len().to_string().len().max(2);
    let names = (0..counts.len()).map(|c| format!("class_{c:0width$}")).collect();
    Dataset::new(samples, names)
}
