//! Adam, cosine annealing, augmentation and the training loop.

mod augment;
mod fit;
mod optim;
mod schedule;

pub use augment::{center_crop, crop, flip_horizontal, pad, resize_bilinear, Normalizer, Preprocess};
pub use fit::{evaluate, fit, prepare_eval, recalibrate_batch_norms, EpochLog, TrainConfig, TrainReport};
pub use optim::{adam_update, Adam, AdamConfig};
pub use schedule::cosine_lr;
