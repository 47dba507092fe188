//! Rotation pretraining, fine-tuning and supervised training loops.

mod data;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::loss::{rotation_loss, weighted_ce, weighted_softmax_ce, ClassWeights};
use crate::model::{build_model, BackboneConfig, CheckpointMeta, Init, Mode, Model, Phase};
use crate::nn::{Adam, Parameterized, Tensor};
use crate::preprocess::{augment_rgb8, normalize, ImageTensor};
use crate::pretext::{make_rotation_batch, rotate, Expansion, RotationAngle};
use crate::rng;

pub use data::{eval_logits, EvalInputs, EvalSet, FrameKey, FramePool, ImagePipeline, EVAL_CHUNK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    /// Rotated instances per step.
    pub batch_size: usize,
    pub epochs: u32,
    pub lr: f64,
    pub expansion: Expansion,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            batch_size: 80,
            epochs: 150,
            lr: 1e-3,
            expansion: Expansion::AllFour,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub epochs: u32,
    pub base_lr: f64,
    /// Fractions of `epochs` at which the rate is multiplied by `decay_factor`.
    pub milestones: Vec<f64>,
    pub decay_factor: f64,
    pub min_lr: f64,
    pub warmup_epochs: u32,
    pub class_weights: ClassWeights,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            batch_size: 100,
            epochs: 40,
            base_lr: 1e-3,
            milestones: vec![0.25, 0.5, 0.75],
            decay_factor: 0.1,
            min_lr: 1e-6,
            warmup_epochs: 0,
            class_weights: ClassWeights::default(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must be in (0, 1]".into()));
        }
        if self.milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::Config("milestones must be fractions in [0, 1]".into()));
        }
        if !(self.class_weights.relevant > 0.0 && self.class_weights.irrelevant > 0.0) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        Ok(())
    }
}

/// Step decay: the base rate divided by `1/decay_factor` once per milestone
/// already reached (`epoch >= ceil(m * total)`), floored at `min_lr`.
/// During warm-up the rate ramps linearly up to the base rate.
pub fn lr_schedule(epoch: u32, total: u32, cfg: &FinetuneConfig) -> f64 {
    if epoch < cfg.warmup_epochs {
        return cfg.base_lr * (epoch + 1) as f64 / (cfg.warmup_epochs + 1) as f64;
    }
    let passed = cfg
        .milestones
        .iter()
        .filter(|&&m| epoch as f64 >= (m * total as f64).ceil())
        .count() as i32;
    // dividing by an exact power of ten keeps 1e-3 -> 1e-4 -> ... exact
    let lr = cfg.base_lr / (1.0 / cfg.decay_factor).powi(passed);
    lr.max(cfg.min_lr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
    /// Rotation-task accuracy on the validation frames (pretraining only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub phase: Phase,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned.
    pub selected_epoch: Option<u32>,
    pub wall_time_s: f64,
}

impl TrainLog {
    fn new(phase: Phase) -> Self {
        TrainLog {
            phase,
            epochs: Vec::new(),
            selected_epoch: None,
            wall_time_s: 0.0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.epochs {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, val, r.lr));
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.json` next to each other.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&json, e))?;
        std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|r| r.val_loss).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: Model,
    pub meta: CheckpointMeta,
    pub log: TrainLog,
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data.iter().map(|&v| v as f64).collect()
}

fn grad_tensor(shape: [usize; 4], grad: &[f64]) -> Tensor {
    Tensor::from_vec(shape, grad.iter().map(|&g| g as f32).collect())
}

fn stack(images: &[ImageTensor]) -> Result<Tensor> {
    crate::model::batch_from_images(images)
}

/// Loss and accuracy of the 4-way rotation task on the (unaugmented) eval set.
pub fn rotation_eval(model: &Model, set: &EvalSet) -> Result<(f64, f64)> {
    let EvalInputs::Images { size, chw } = &set.inputs else {
        return Err(Error::Config("rotation evaluation needs images".into()));
    };
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let plane = size * size;
    let (mut loss, mut correct, mut n) = (0.0, 0usize, 0usize);
    for chunk in chw.chunks(EVAL_CHUNK / 4) {
        let mut images = Vec::with_capacity(chunk.len() * 4);
        let mut labels = Vec::with_capacity(chunk.len() * 4);
        for item in chunk {
            // CHW back to HWC for the rotation routine
            let mut hwc = vec![0.0f32; item.len()];
            for c in 0..3 {
                for p in 0..plane {
                    hwc[p * 3 + c] = item[c * plane + p];
                }
            }
            let img = ImageTensor::new(*size, *size, hwc)?;
            for angle in RotationAngle::ALL {
                images.push(rotate(&img, angle)?);
                labels.push(angle.class_index());
            }
        }
        let logits = to_f64(&model.infer(&stack(&images)?)?);
        let out = rotation_loss(&logits, &labels)?;
        loss += out.value * labels.len() as f64;
        for (row, &y) in logits.chunks_exact(4).zip(&labels) {
            if argmax(row) == y {
                correct += 1;
            }
        }
        n += labels.len();
    }
    Ok((loss / n as f64, correct as f64 / n as f64))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Self-supervised rotation pretraining on unlabeled frames.
///
/// Each step augments the source crops, rotates them, normalizes and takes
/// one Adam step at the fixed rate. Returns the final-epoch model.
pub fn pretrain(
    backbone: &BackboneConfig,
    pool: &FramePool,
    val: Option<&EvalSet>,
    cfg: &PretrainConfig,
    pipeline: &ImagePipeline,
    seed: u64,
) -> Result<TrainResult> {
    if pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let mut model = build_model(backbone, 4, &Init::Random, seed)?;
    model.reseed_dropout(rng::derive_seed(seed, "dropout", 0));
    let mut adam = Adam::new();
    let mut log = TrainLog::new(Phase::Pretext);
    let per_step = (cfg.batch_size / cfg.expansion.multiplicity()).max(1);
    let norm = &pipeline.normalization;
    let mut last_val = None;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng::stream(seed, "shuffle", epoch as u64));
        let mut aug_rng = rng::stream(seed, "augment", epoch as u64);
        let mut rot_rng = rng::stream(seed, "rotation", epoch as u64);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(per_step) {
            let sources: Vec<ImageTensor> = batch
                .iter()
                .map(|&i| augment_rgb8(&pool.crops[i], &pipeline.augment, &mut aug_rng))
                .collect();
            let rotated = make_rotation_batch(&sources, cfg.expansion, &mut rot_rng)?;
            let inputs = rotated
                .images
                .iter()
                .map(|img| normalize(img, norm.mean, norm.std))
                .collect::<Result<Vec<_>>>()?;
            let logits = model.forward(&stack(&inputs)?, Mode::Train)?;
            let out = rotation_loss(&to_f64(&logits), &rotated.labels)?;
            model.backward(&grad_tensor(logits.shape, &out.grad));
            adam.step(&mut model, cfg.lr as f32);
            model.zero_grad();
            total += out.value * rotated.labels.len() as f64;
            count += rotated.labels.len();
        }
        let (val_loss, val_accuracy) = match val {
            Some(set) => {
                let (l, a) = rotation_eval(&model, set)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        last_val = val_loss;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: total / count as f64,
            val_loss,
            lr: cfg.lr,
            val_accuracy,
        });
    }
    log.selected_epoch = cfg.epochs.checked_sub(1);
    log.wall_time_s = start.elapsed().as_secs_f64();
    let meta = CheckpointMeta::new(Phase::Pretext, seed, cfg.epochs.saturating_sub(1), last_val, "");
    Ok(TrainResult { model, meta, log })
}

/// Training examples for [`fit_classifier`].
#[derive(Debug, Clone, Copy)]
pub enum TrainInputs<'a> {
    /// Augmented on the fly from the pool.
    Images {
        pool: &'a FramePool,
        indices: &'a [usize],
        pipeline: &'a ImagePipeline,
    },
    /// Fixed feature vectors; no augmentation.
    Features(&'a [Vec<f32>]),
}

impl TrainInputs<'_> {
    fn len(&self) -> usize {
        match self {
            TrainInputs::Images { indices, .. } => indices.len(),
            TrainInputs::Features(v) => v.len(),
        }
    }

    fn batch(&self, items: &[usize], aug_rng: &mut rng::Stream) -> Result<Tensor> {
        match self {
            TrainInputs::Images {
                pool,
                indices,
                pipeline,
            } => {
                let norm = &pipeline.normalization;
                let images = items
                    .iter()
                    .map(|&i| {
                        let img = augment_rgb8(&pool.crops[indices[i]], &pipeline.augment, aug_rng);
                        normalize(&img, norm.mean, norm.std)
                    })
                    .collect::<Result<Vec<_>>>()?;
                stack(&images)
            }
            TrainInputs::Features(v) => {
                crate::model::batch_from_features(&items.iter().map(|&i| v[i].as_slice()).collect::<Vec<_>>())
            }
        }
    }
}

/// Unweighted mean cross-entropy of the binary classifier on `set`.
pub fn validation_loss(model: &Model, set: &EvalSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let truth: Vec<usize> = set.truth()?.iter().map(|l| l.index()).collect();
    let logits = eval_logits(model, set)?;
    Ok(weighted_softmax_ce(&logits, 2, &truth, |_| 1.0)?.value)
}

/// Trains every parameter of a binary classifier with the class-weighted
/// loss and step schedule; returns the weights of the epoch with the lowest
/// (unweighted) validation loss.
pub fn fit_classifier(
    mut model: Model,
    inputs: TrainInputs,
    labels: &[ClassLabel],
    val: &EvalSet,
    cfg: &FinetuneConfig,
    phase: Phase,
    seed: u64,
) -> Result<TrainResult> {
    cfg.validate()?;
    if inputs.len() == 0 || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != inputs.len() {
        return Err(Error::LengthMismatch {
            preds: inputs.len(),
            truth: labels.len(),
        });
    }
    if model.n_out() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "binary training needs 2 outputs, model has {}",
            model.n_out()
        )));
    }
    let start = Instant::now();
    model.reseed_dropout(rng::derive_seed(seed, "dropout", 1));
    let mut adam = Adam::new();
    let mut log = TrainLog::new(phase);
    let mut best = (validation_loss(&model, val)?, None::<u32>, model.clone());
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.epochs, cfg);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng::stream(seed, "shuffle", epoch as u64));
        let mut aug_rng = rng::stream(seed, "augment", epoch as u64);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let x = inputs.batch(batch, &mut aug_rng)?;
            let y: Vec<ClassLabel> = batch.iter().map(|&i| labels[i]).collect();
            let logits = model.forward(&x, Mode::Train)?;
            let out = weighted_ce(&to_f64(&logits), &y, cfg.class_weights)?;
            model.backward(&grad_tensor(logits.shape, &out.grad));
            adam.step(&mut model, lr as f32);
            model.zero_grad();
            total += out.value * y.len() as f64;
            count += y.len();
        }
        let val_loss = validation_loss(&model, val)?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: total / count as f64,
            val_loss: Some(val_loss),
            lr,
            val_accuracy: None,
        });
        // the first epoch always replaces the untrained weights
        if best.1.is_none() || val_loss < best.0 {
            best = (val_loss, Some(epoch), model.clone());
        }
    }
    let (val_loss, selected, model) = best;
    log.selected_epoch = selected;
    log.wall_time_s = start.elapsed().as_secs_f64();
    let meta = CheckpointMeta::new(phase, seed, selected.unwrap_or(0), Some(val_loss), "");
    Ok(TrainResult { model, meta, log })
}

fn labels_of(pool: &FramePool, indices: &[usize]) -> Result<Vec<ClassLabel>> {
    indices
        .iter()
        .map(|&i| {
            pool.labels[i].ok_or_else(|| {
                Error::Config(format!(
                    "training frame {}@{}s has no label",
                    pool.keys[i].0, pool.keys[i].1
                ))
            })
        })
        .collect()
}

/// Swaps in a fresh binary head and fine-tunes the whole network.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    pretext: &Model,
    pool: &FramePool,
    labeled: &[usize],
    val: &EvalSet,
    cfg: &FinetuneConfig,
    pipeline: &ImagePipeline,
    seed: u64,
) -> Result<TrainResult> {
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = pretext.clone();
    model.swap_head(2, rng::derive_seed(seed, "head", 0));
    let labels = labels_of(pool, labeled)?;
    let inputs = TrainInputs::Images {
        pool,
        indices: labeled,
        pipeline,
    };
    fit_classifier(model, inputs, &labels, val, cfg, Phase::Finetune, seed)
}

/// Same loop as [`finetune`], starting from random or external weights.
#[allow(clippy::too_many_arguments)]
pub fn train_supervised(
    backbone: &BackboneConfig,
    init: &Init,
    pool: &FramePool,
    labeled: &[usize],
    val: &EvalSet,
    cfg: &FinetuneConfig,
    pipeline: &ImagePipeline,
    seed: u64,
) -> Result<TrainResult> {
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let model = build_model(backbone, 2, init, seed)?;
    let labels = labels_of(pool, labeled)?;
    let inputs = TrainInputs::Images {
        pool,
        indices: labeled,
        pipeline,
    };
    fit_classifier(model, inputs, &labels, val, cfg, Phase::Supervised, seed)
}
