//! Image datasets: class-per-folder loading, stratified splitting and a
//! synthetic cell-image generator.

mod folder;
mod split;
mod synth;

pub use folder::{load_folder_dataset, load_manifest_dataset, read_image, write_folder_dataset, LoadReport};
pub use split::{split_dataset, SplitReport};
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitTag {
    #[default]
    Full,
    Train,
    Test,
}

/// One `[C, H, W]` image in `[0, 1]` with its label id.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.label >= k) {
            return Err(Error::Data(format!("sample {i} has label {} but only {k} classes", s.label)));
        }
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.image.rank() != 3) {
            return Err(Error::Data(format!("sample {i} image has shape {:?}, expected [C, H, W]", s.image.shape())));
        }
        Ok(Dataset {
            samples,
            class_names,
            split: SplitTag::Full,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for s in &self.samples {
            c[s.label] += 1;
        }
        c
    }

    pub fn subset(&self, indices: &[usize], split: SplitTag) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            class_names: self.class_names.clone(),
            split,
        }
    }
}

/// Stacks equally sized `[C, H, W]` images into `[B, C, H, W]`.
pub fn stack_images(images: &[Tensor]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Data("cannot stack an empty batch".into()))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(first.numel() * images.len());
    for (i, img) in images.iter().enumerate() {
        if img.shape() != shape.as_slice() {
            return Err(Error::Data(format!(
                "image {i} has shape {:?}, batch expects {shape:?}",
                img.shape()
            )));
        }
        data.extend_from_slice(img.data());
    }
    let mut full = vec![images.len()];
    full.extend(shape);
    Tensor::new(full, data)
}
