use std::f64::consts::PI;

/// `lr_min + (lr_max - lr_min) * (1 + cos(pi * t / T)) / 2`, clamped to
/// `lr_min` past `T`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    if t >= total {
        return lr_min;
    }
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t as f64 / total as f64).cos())
}
