//! Handcrafted frame descriptors (color, HOG, texture, blob and their
//! fusion) and the MLP-2 classifiers trained on them.

mod cache;
mod features;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, FrameSample, FrameStore};
use crate::error::{Error, Result};
use crate::model::{build_model, BackboneConfig, Init, Phase};
use crate::preprocess::{eval_path_unnormalized, ImageTensor};
use crate::train::{fit_classifier, EvalSet, FinetuneConfig, ImagePipeline, TrainInputs, TrainResult};

pub use cache::FeatureCache;
pub use features::{
    blob_feature, blob_level_scales, blob_sigmas, color_feature, detect_blobs, grayscale, hog_dim, hog_feature,
    lbp_bin_table, lbp_code, texture_feature, Blob, BLOB_DIM, BLOB_HIST_BINS, BLOB_HIST_MAX, BLOB_THRESHOLD,
    COLOR_BINS, HOG_BINS, LBP_BINS, LBP_OFFSETS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Color,
    Hog,
    Texture,
    Blob,
    Fusion,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::Color,
        FeatureKind::Hog,
        FeatureKind::Texture,
        FeatureKind::Blob,
        FeatureKind::Fusion,
    ];

    /// Components in fusion order.
    pub const COMPONENTS: [FeatureKind; 4] = [
        FeatureKind::Color,
        FeatureKind::Hog,
        FeatureKind::Texture,
        FeatureKind::Blob,
    ];

    /// Dimension for 224 x 224 inputs.
    pub fn dim(self) -> usize {
        match self {
            FeatureKind::Color => 3 * COLOR_BINS,
            FeatureKind::Hog => hog_dim(224, 224),
            FeatureKind::Texture => LBP_BINS,
            FeatureKind::Blob => BLOB_DIM,
            FeatureKind::Fusion => Self::COMPONENTS.iter().map(|k| k.dim()).sum(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Color => "color",
            FeatureKind::Hog => "hog",
            FeatureKind::Texture => "texture",
            FeatureKind::Blob => "blob",
            FeatureKind::Fusion => "fusion",
        }
    }

    /// Display name used in result tables.
    pub fn title(self) -> &'static str {
        match self {
            FeatureKind::Color => "Color",
            FeatureKind::Hog => "HOG",
            FeatureKind::Texture => "Texture",
            FeatureKind::Blob => "Blob",
            FeatureKind::Fusion => "Fusion",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown feature kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Computes one descriptor of an un-normalized `[0, 1]` image.
pub fn extract(kind: FeatureKind, img: &ImageTensor) -> FeatureVector {
    let values = match kind {
        FeatureKind::Color => color_feature(img),
        FeatureKind::Hog => hog_feature(img),
        FeatureKind::Texture => texture_feature(img),
        FeatureKind::Blob => blob_feature(img),
        FeatureKind::Fusion => fusion_feature(img),
    };
    FeatureVector { kind, values }
}

/// Color ++ HOG ++ Texture ++ Blob.
pub fn fusion_feature(img: &ImageTensor) -> Vec<f32> {
    let mut out = color_feature(img);
    out.extend(hog_feature(img));
    out.extend(texture_feature(img));
    out.extend(blob_feature(img));
    out
}

/// Offset of each component inside the fusion vector.
pub fn fusion_offsets() -> [(FeatureKind, std::ops::Range<usize>); 4] {
    let mut start = 0;
    FeatureKind::COMPONENTS.map(|k| {
        let r = start..start + k.dim();
        start = r.end;
        (k, r)
    })
}

/// Descriptors of `frames` computed on the un-augmented eval-path image.
/// With a cache, stored vectors are reused and new ones written back.
pub fn compute_features(
    kind: FeatureKind,
    store: &FrameStore,
    frames: &[FrameSample],
    pipeline: &ImagePipeline,
    cache: Option<&FeatureCache>,
) -> Result<Vec<Vec<f32>>> {
    let mut known = match cache {
        Some(c) => c.read(kind)?.unwrap_or_default(),
        None => Default::default(),
    };
    let mut dirty = false;
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let key = (f.video_id.clone(), f.timestamp_s);
        if let Some(v) = known.get(&key) {
            out.push(v.clone());
            continue;
        }
        let raster = store.load(&f.video_id, f.timestamp_s)?;
        let img = eval_path_unnormalized(&raster, pipeline.crop_size, pipeline.input_size)?;
        let values = extract(kind, &img).values;
        if cache.is_some() {
            known.insert(key, values.clone());
            dirty = true;
        }
        out.push(values);
    }
    if let (Some(c), true) = (cache, dirty) {
        c.write(kind, &known)?;
    }
    Ok(out)
}

/// MLP-2 on fixed descriptors, trained with the same loss and schedule as
/// the image models. No augmentation.
pub fn train_feature_classifier(
    kind: FeatureKind,
    features: &[Vec<f32>],
    labels: &[ClassLabel],
    val: &EvalSet,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<TrainResult> {
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(bad) = features.iter().find(|v| v.len() != kind.dim()) {
        return Err(Error::ShapeMismatch(format!(
            "{kind} features have dim {}, got {}",
            kind.dim(),
            bad.len()
        )));
    }
    let model = build_model(&BackboneConfig::features(kind), 2, &Init::Random, seed)?;
    fit_classifier(
        model,
        TrainInputs::Features(features),
        labels,
        val,
        cfg,
        Phase::Supervised,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ImageTensor {
        let data = (0..224 * 224 * 3)
            .map(|i| {
                let (p, c) = (i / 3, i % 3);
                let (y, x) = (p / 224, p % 224);
                (((x * (c + 1) + y * 3) % 97) as f32 / 96.0).clamp(0.0, 1.0)
            })
            .collect();
        ImageTensor::new(224, 224, data).unwrap()
    }

    #[test]
    fn dims() {
        assert_eq!(FeatureKind::Color.dim(), 96);
        assert_eq!(FeatureKind::Hog.dim(), 26244);
        assert_eq!(FeatureKind::Texture.dim(), 59);
        assert_eq!(FeatureKind::Blob.dim(), 11);
        assert_eq!(FeatureKind::Fusion.dim(), 26410);
    }

    #[test]
    fn fusion_is_ordered_concatenation() {
        let img = sample();
        let fused = extract(FeatureKind::Fusion, &img).values;
        assert_eq!(fused.len(), 26410);
        for (kind, range) in fusion_offsets() {
            assert_eq!(fused[range], extract(kind, &img).values[..], "{kind}");
        }
        // a permuted order would misplace the color block
        let mut swapped = hog_feature(&img);
        swapped.extend(color_feature(&img));
        assert_ne!(fused[..96], swapped[..96]);
    }

    #[test]
    fn extractors_are_deterministic_and_normalized() {
        let img = sample();
        for kind in FeatureKind::ALL {
            let a = extract(kind, &img);
            assert_eq!(a, extract(kind, &img));
            assert_eq!(a.dim(), kind.dim());
            assert!(a.values.iter().all(|v| v.is_finite()));
        }
        let color = color_feature(&img);
        assert!((color.iter().sum::<f32>() - 3.0).abs() < 1e-5);
        assert!(color.iter().all(|&v| v >= 0.0));
        let tex = texture_feature(&img);
        assert!((tex.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in FeatureKind::ALL {
            assert_eq!(k.as_str().parse::<FeatureKind>().unwrap(), k);
        }
        assert!("sift".parse::<FeatureKind>().is_err());
    }
}
