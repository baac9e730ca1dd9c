use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{cosine_lr, Adam, AdamConfig, Normalizer, Preprocess};
use crate::autodiff::Tape;
use crate::checkpoint::{self, CheckpointMeta};
use crate::data::{stack_images, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, confusion, MetricsReport};
use crate::model::{argmax_rows, SCKansformer};
use crate::nn::{Mode, Module};
use crate::rng::substream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub flip_prob: f64,
    pub resize: usize,
    pub crop: usize,
    pub padding: usize,
    /// Stop once an epoch's training accuracy reaches this value.
    pub target_train_acc: Option<f64>,
    pub eval_batch_size: usize,
    /// Re-estimate batch-norm running statistics from the training images
    /// before each evaluation.
    pub bn_recalibrate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr_max: 1e-3,
            lr_min: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            flip_prob: 0.5,
            resize: 40,
            crop: 32,
            padding: 0,
            target_train_acc: None,
            eval_batch_size: 64,
            bn_recalibrate: true,
        }
    }
}

impl TrainConfig {
    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            resize: self.resize,
            crop: self.crop,
            padding: self.padding,
            flip_prob: self.flip_prob,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 || self.eval_batch_size == 0 {
            return Err(Error::Config(
                "epochs must be positive and batch_size at least 2 (batch norm needs two samples)".into(),
            ));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 <= lr_min ({}) <= lr_max ({})",
                self.lr_min, self.lr_max
            )));
        }
        self.preprocess().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_precision: f64,
    pub eval_recall: f64,
    pub eval_f1: f64,
    pub eval_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Evaluation of the best checkpoint.
    pub best: MetricsReport,
    pub best_state: BTreeMap<String, Tensor>,
    pub normalizer: Normalizer,
    pub stopped_early: bool,
}

/// Eval preprocessing plus normalization for every sample.
pub fn prepare_eval(ds: &Dataset, pre: &Preprocess, norm: &Normalizer) -> Result<Vec<Tensor>> {
    ds.samples
        .iter()
        .map(|s| Ok(norm.apply(&pre.preprocess_eval(&s.image)?)))
        .collect()
}

/// Eval-mode scores over prepared images.
pub fn evaluate(
    model: &SCKansformer,
    images: &[Tensor],
    labels: &[usize],
    class_names: &[String],
    batch: usize,
) -> Result<MetricsReport> {
    let mut preds = Vec::with_capacity(labels.len());
    for chunk in images.chunks(batch.max(1)) {
        preds.extend(model.predict(&stack_images(chunk)?)?);
    }
    let k = model.config.num_classes;
    Ok(compute_metrics(&confusion(labels, &preds, k)?)?.with_class_names(class_names))
}

/// Replaces every batch-norm running average with the exact mean of the
/// batch statistics over `images`. No parameters change.
pub fn recalibrate_batch_norms(model: &SCKansformer, images: &[Tensor], batch: usize) -> Result<()> {
    if !model.begin_bn_calibration() || images.len() < 2 {
        return Ok(());
    }
    let order: Vec<usize> = (0..images.len()).collect();
    for idx in batches(&order, batch.max(2)) {
        let chunk: Vec<Tensor> = idx.iter().map(|&i| images[i].clone()).collect();
        let tape = Tape::new();
        model.forward(&tape, tape.constant(stack_images(&chunk)?), Mode::Calibrate)?;
    }
    Ok(())
}

/// Batches of `n` shuffled indices; a trailing singleton joins the previous
/// batch so batch norm always sees two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() >= 2 && out[out.len() - 1].len() == 1 {
        let n = order.len();
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("len >= 1") = &order[start..n];
    }
    out
}

fn write_snapshot(out: &Path, model: &SCKansformer, meta: &CheckpointMeta, epoch: usize, step: usize, err: &Error) {
    let dir = out.join("nan_snapshot");
    let diag = serde_json::json!({ "epoch": epoch, "step": step, "error": err.to_string() });
    let res = checkpoint::save(&dir, model, meta).and_then(|_| {
        let p = dir.join("diagnostic.json");
        fs::write(&p, diag.to_string()).map_err(|e| Error::io(&p, e))
    });
    if let Err(e) = res {
        log::error!("could not write numerical snapshot: {e}");
    }
}

/// Trains `model` in place. With `out`, writes `log.jsonl`, the best
/// checkpoint under `checkpoint/` and its metrics files.
pub fn fit(
    model: &mut SCKansformer,
    train: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Data("training needs at least two samples".into()));
    }
    let mc = &model.config;
    if mc.image_h != cfg.crop || mc.image_w != cfg.crop {
        return Err(Error::Config(format!(
            "model expects {}x{} inputs but training crops to {}",
            mc.image_h, mc.image_w, cfg.crop
        )));
    }
    if train.num_classes() != mc.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model has {}",
            train.num_classes(),
            mc.num_classes
        )));
    }
    let pre = cfg.preprocess();
    let plain: Vec<Tensor> = train
        .samples
        .iter()
        .map(|s| pre.preprocess_eval(&s.image))
        .collect::<Result<_>>()?;
    let normalizer = Normalizer::fit(&plain)?;
    let calibration: Vec<Tensor> = if cfg.bn_recalibrate {
        plain.iter().map(|img| normalizer.apply(img)).collect()
    } else {
        Vec::new()
    };
    let eval_set = eval.unwrap_or(train);
    let eval_images = prepare_eval(eval_set, &pre, &normalizer)?;
    let eval_labels = eval_set.labels();
    let meta = CheckpointMeta {
        model: model.config.clone(),
        preprocess: pre,
        normalizer: normalizer.clone(),
        class_names: train.class_names.clone(),
    };

    let mut log_file = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("log.jsonl");
            Some(File::create(&p).map_err(|e| Error::io(&p, e))?)
        }
        None => None,
    };

    let mut shuffle_rng = substream(cfg.seed, "shuffle");
    let mut augment_rng = substream(cfg.seed, "augment");
    let mut adam = Adam::new(cfg.adam());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logs = Vec::new();
    let mut best: Option<(usize, MetricsReport, BTreeMap<String, Tensor>)> = None;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let imgs = idx
                .iter()
                .map(|&i| Ok(normalizer.apply(&pre.augment_train(&train.samples[i].image, &mut augment_rng)?)))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = idx.iter().map(|&i| train.samples[i].label).collect();
            let batch = stack_images(&imgs)?;
            let result = (|| -> Result<(f64, Vec<usize>)> {
                let tape = Tape::new();
                let logits = model.forward(&tape, tape.constant(batch), Mode::Train)?;
                let loss = logits.cross_entropy(&labels)?;
                let value = loss.value().item();
                if !value.is_finite() {
                    return Err(Error::Numerical(format!("loss became {value}")));
                }
                let grads = tape.backward(loss)?;
                adam.step(model, &grads, lr)?;
                Ok((value, argmax_rows(&logits.value())))
            })();
            match result {
                Ok((value, preds)) => {
                    loss_sum += value * labels.len() as f64;
                    correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
                }
                Err(e @ Error::Numerical(_)) => {
                    log::error!("numerical failure at epoch {epoch}, step {step}: {e}");
                    if let Some(dir) = out {
                        write_snapshot(dir, model, &meta, epoch, step, &e);
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        if cfg.bn_recalibrate {
            recalibrate_batch_norms(model, &calibration, cfg.eval_batch_size)?;
        }
        let report = evaluate(model, &eval_images, &eval_labels, &eval_set.class_names, cfg.eval_batch_size)?;
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            eval_precision: report.macro_precision,
            eval_recall: report.macro_recall,
            eval_f1: report.macro_f1,
            eval_acc: report.accuracy,
        };
        log::info!(
            "epoch {epoch:>3}  lr {lr:.2e}  loss {:.4}  train_acc {:.3}  eval_acc {:.3}  eval_f1 {:.3}",
            entry.train_loss,
            entry.train_acc,
            entry.eval_acc,
            entry.eval_f1
        );
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io("log.jsonl", e))?;
        }
        if best.as_ref().is_none_or(|(_, b, _)| report.accuracy > b.accuracy) {
            if let Some(dir) = out {
                checkpoint::save(&dir.join("checkpoint"), model, &meta)?;
            }
            best = Some((epoch, report, model.state_dict()));
        }
        let reached = cfg.target_train_acc.is_some_and(|t| entry.train_acc >= t);
        logs.push(entry);
        if reached {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_report, best_state) = best.expect("at least one epoch");
    if let Some(dir) = out {
        best_report.write_all(dir)?;
    }
    Ok(TrainReport {
        logs,
        best_epoch,
        best: best_report,
        best_state,
        normalizer,
        stopped_early,
    })
}
