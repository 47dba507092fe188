use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::FrameSample;
use crate::error::{Error, Result};
use crate::rng;

/// Train/validation/test proportions of whole videos.
pub type Ratios = [f64; 3];

/// Case-level split for one cross-validation fold. Id lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: u32,
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl FoldSplit {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" | "validation" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }

    pub fn is_train(&self, video_id: &str) -> bool {
        self.train.binary_search_by(|id| id.as_str().cmp(video_id)).is_ok()
    }
}

/// Independent seeded re-splits of the corpus, one per fold.
///
/// Train and validation sizes are `round(ratio * n)`; whatever remains goes
/// to test. Fold `k` shuffles with the stream derived from `(seed, "split", k)`.
pub fn split_folds(video_ids: &[String], n_folds: u32, seed: u64, ratios: Ratios) -> Result<Vec<FoldSplit>> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Ratio(ratios));
    }
    let ids: BTreeSet<&String> = video_ids.iter().collect();
    if ids.is_empty() || ids.len() < n_folds as usize || n_folds == 0 {
        return Err(Error::EmptyCorpus);
    }
    if ids.len() != video_ids.len() {
        return Err(Error::Config("duplicate video ids".into()));
    }
    let n = ids.len();
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);

    let sorted: Vec<String> = ids.into_iter().cloned().collect();
    Ok((0..n_folds)
        .map(|fold_id| {
            let mut order = sorted.clone();
            order.shuffle(&mut rng::stream(seed, "split", fold_id as u64));
            let mut train = order[..n_train].to_vec();
            let mut val = order[n_train..n_train + n_val].to_vec();
            let mut test = order[n_train + n_val..].to_vec();
            train.sort();
            val.sort();
            test.sort();
            FoldSplit {
                fold_id,
                seed,
                train,
                val,
                test,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSubset {
    pub fold_id: u32,
    pub fraction: f64,
    pub frame_refs: Vec<(String, u32)>,
    pub seed: u64,
}

/// `floor(fraction * n)`, robust to the representation error of decimal fractions.
pub fn subsample_size(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-7).floor() as usize
}

/// Uniform sample without replacement of `floor(fraction * N)` training frames.
/// The returned refs keep the input order.
pub fn subsample_labels(fold: &FoldSplit, frames: &[FrameSample], fraction: f64, seed: u64) -> Result<LabeledSubset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Fraction(fraction));
    }
    if let Some(f) = frames.iter().find(|f| !fold.is_train(&f.video_id)) {
        return Err(Error::Config(format!(
            "frame of video `{}` is not in the training split of fold {}",
            f.video_id, fold.fold_id
        )));
    }
    let n = frames.len();
    let k = subsample_size(fraction, n);
    let picked: Vec<usize> = if k == n {
        (0..n).collect()
    } else {
        let mut stream = rng::stream_from_seed(seed);
        let mut idx = index::sample(&mut stream, n, k).into_vec();
        idx.sort_unstable();
        idx
    };
    Ok(LabeledSubset {
        fold_id: fold.fold_id,
        fraction,
        frame_refs: picked
            .into_iter()
            .map(|i| (frames[i].video_id.clone(), frames[i].timestamp_s))
            .collect(),
        seed,
    })
}
