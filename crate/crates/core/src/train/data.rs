//! In-memory frame caches for training and evaluation.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, FrameSample, FrameStore};
use crate::error::{Error, Result};
use crate::model::{batch_from_features, Model};
use crate::nn::Tensor;
use crate::preprocess::{center_crop_rgb8, eval_path, AugmentConfig, Normalization};

/// Geometry and normalization shared by the training and evaluation paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImagePipeline {
    pub crop_size: usize,
    pub input_size: usize,
    pub normalization: Normalization,
    pub augment: AugmentConfig,
}

impl Default for ImagePipeline {
    fn default() -> Self {
        ImagePipeline {
            crop_size: 640,
            input_size: 224,
            normalization: Normalization::default(),
            augment: AugmentConfig::default(),
        }
    }
}

pub type FrameKey = (String, u32);

/// Center-cropped 8-bit training frames, ready for augmentation.
#[derive(Debug, Clone)]
pub struct FramePool {
    pub keys: Vec<FrameKey>,
    pub crops: Vec<RgbImage>,
    pub labels: Vec<Option<ClassLabel>>,
}

impl FramePool {
    pub fn load(store: &FrameStore, frames: &[FrameSample], crop_size: usize) -> Result<Self> {
        let mut pool = FramePool {
            keys: Vec::with_capacity(frames.len()),
            crops: Vec::with_capacity(frames.len()),
            labels: Vec::with_capacity(frames.len()),
        };
        for f in frames {
            let raster = store.load(&f.video_id, f.timestamp_s)?;
            pool.crops.push(center_crop_rgb8(&raster, crop_size)?);
            pool.keys.push((f.video_id.clone(), f.timestamp_s));
            pool.labels.push(f.label);
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Positions of the given frames; every key must be present.
    pub fn indices_of(&self, refs: &[FrameKey]) -> Result<Vec<usize>> {
        let lookup: std::collections::HashMap<&FrameKey, usize> =
            self.keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
        refs.iter()
            .map(|k| {
                lookup.get(k).copied().ok_or_else(|| Error::MissingFrames {
                    video_id: k.0.clone(),
                    timestamp_s: k.1,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum EvalInputs {
    /// Normalized CHW images.
    Images {
        size: usize,
        chw: Vec<Vec<f32>>,
    },
    Features(Vec<Vec<f32>>),
}

/// Deterministically preprocessed validation/test frames.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub keys: Vec<FrameKey>,
    pub inputs: EvalInputs,
    pub labels: Vec<Option<ClassLabel>>,
}

impl EvalSet {
    /// center crop -> resize -> normalize; never augmented.
    pub fn images(store: &FrameStore, frames: &[FrameSample], pipeline: &ImagePipeline) -> Result<Self> {
        let mut chw = Vec::with_capacity(frames.len());
        for f in frames {
            let raster = store.load(&f.video_id, f.timestamp_s)?;
            let img = eval_path(
                &raster,
                pipeline.crop_size,
                pipeline.input_size,
                &pipeline.normalization,
            )?;
            chw.push(img.to_chw());
        }
        Ok(EvalSet {
            keys: frames.iter().map(|f| (f.video_id.clone(), f.timestamp_s)).collect(),
            inputs: EvalInputs::Images {
                size: pipeline.input_size,
                chw,
            },
            labels: frames.iter().map(|f| f.label).collect(),
        })
    }

    pub fn features(frames: &[FrameSample], vectors: Vec<Vec<f32>>) -> Result<Self> {
        if frames.len() != vectors.len() {
            return Err(Error::LengthMismatch {
                preds: vectors.len(),
                truth: frames.len(),
            });
        }
        Ok(EvalSet {
            keys: frames.iter().map(|f| (f.video_id.clone(), f.timestamp_s)).collect(),
            inputs: EvalInputs::Features(vectors),
            labels: frames.iter().map(|f| f.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Input tensor for items `range`.
    pub fn batch(&self, range: std::ops::Range<usize>) -> Result<Tensor> {
        match &self.inputs {
            EvalInputs::Images { size, chw } => {
                let n = range.len();
                let mut data = Vec::with_capacity(n * 3 * size * size);
                for item in &chw[range] {
                    data.extend_from_slice(item);
                }
                Ok(Tensor::from_vec([n, 3, *size, *size], data))
            }
            EvalInputs::Features(v) => batch_from_features(&v[range].iter().map(Vec::as_slice).collect::<Vec<_>>()),
        }
    }

    /// Ground-truth labels; errors when any frame is unlabeled.
    pub fn truth(&self) -> Result<Vec<ClassLabel>> {
        self.labels
            .iter()
            .zip(&self.keys)
            .map(|(l, k)| l.ok_or_else(|| Error::Config(format!("frame {}@{}s has no label", k.0, k.1))))
            .collect()
    }
}

/// Evaluation batch size; bounds peak memory only.
pub const EVAL_CHUNK: usize = 64;

/// Eval-mode logits of every item, row-major `n x n_out`.
pub fn eval_logits(model: &Model, set: &EvalSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len() * model.n_out());
    let mut start = 0;
    while start < set.len() {
        let end = (start + EVAL_CHUNK).min(set.len());
        let logits = model.infer(&set.batch(start..end)?)?;
        out.extend(logits.data.iter().map(|&v| v as f64));
        start = end;
    }
    Ok(out)
}
