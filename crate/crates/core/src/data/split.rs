use rand::seq::SliceRandom;

use super::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitReport {
    /// Classes with a single sample, sent entirely to the training side.
    pub singleton_classes: Vec<usize>,
}

/// Stratified split: each class sends `round(ratio * n_c)` samples to train,
/// clamped so both sides get at least one when `n_c >= 2`. Sample order
/// within each side follows the original dataset order.
pub fn split_dataset(ds: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset, SplitReport)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie strictly between 0 and 1")));
    }
    let mut rng = substream(seed, "split");
    let mut report = SplitReport::default();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..ds.num_classes() {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].label == c).collect();
        let n = idx.len();
        if n == 0 {
            continue;
        }
        if n == 1 {
            log::warn!("class {} has one sample; it goes to the training split", ds.class_names[c]);
            report.singleton_classes.push(c);
            train.push(idx[0]);
            continue;
        }
        idx.shuffle(&mut rng);
        let k = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train, SplitTag::Train), ds.subset(&test, SplitTag::Test), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::tensor::Tensor;

    fn toy(counts: &[usize]) -> Dataset {
        let mut samples = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                samples.push(Sample {
                    image: Tensor::full([1, 1, 1], (c * 100 + i) as f64),
                    label: c,
                });
            }
        }
        Dataset::new(samples, (0..counts.len()).map(|c| c.to_string()).collect()).unwrap()
    }

    #[test]
    fn eight_two_per_class() {
        let (tr, te, _) = split_dataset(&toy(&[10, 10, 10]), 0.8, 1).unwrap();
        assert_eq!(tr.class_counts(), vec![8, 8, 8]);
        assert_eq!(te.class_counts(), vec![2, 2, 2]);
    }

    #[test]
    fn extremes_rejected_and_singletons_train() {
        let ds = toy(&[1, 2]);
        assert!(split_dataset(&ds, 0.0, 1).is_err());
        assert!(split_dataset(&ds, 1.0, 1).is_err());
        let (tr, te, rep) = split_dataset(&ds, 0.9, 1).unwrap();
        assert_eq!(tr.class_counts(), vec![1, 1]);
        assert_eq!(te.class_counts(), vec![0, 1]);
        assert_eq!(rep.singleton_classes, vec![0]);
    }
}
