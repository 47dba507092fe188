//! Fold-level runs wired from an [`ExperimentConfig`]: data loading,
//! pretraining, fine-tuning, supervised and feature baselines, evaluation and
//! the on-disk run layout shared with the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{compute_features, train_feature_classifier, FeatureCache, FeatureKind};
use crate::config::ExperimentConfig;
use crate::dataset::{split_folds, subsample_labels, ClassLabel, Corpus, FoldSplit, FrameSample, LabeledSubset};
use crate::error::{Error, Result};
use crate::eval::{
    build_timelines, confusion, export_errors, predict, render_timeline, MetricsReport, PredictionTimeline,
};
use crate::model::{BackboneKind, Init, Model};
use crate::rng::{derive_seed, sha256_hex};
use crate::train::{self, EvalSet, FramePool, TrainResult};

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub corpus: Corpus,
}

/// Frames of one fold held in memory: the training pool (with labels) and
/// the preprocessed validation set.
pub struct FoldData {
    pub fold: FoldSplit,
    pub train: FramePool,
    pub val: EvalSet,
}

/// How a model makes its per-frame decisions at evaluation time.
#[derive(Debug, Clone)]
pub enum Predictor {
    Model(Box<Model>),
    /// Copies the ground truth.
    Oracle,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub timelines: Vec<PredictionTimeline>,
}

/// Identity of a run directory; written as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub fraction: Option<f64>,
    pub fold_id: u32,
    pub seed: u64,
    pub config_hash: String,
    /// SHA-256 of the input files the run depended on.
    pub inputs: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("run.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Directory-name form of a label fraction: `0.05 -> "5pct"`.
pub fn fraction_tag(fraction: f64) -> String {
    crate::eval::fraction_label(fraction).replace('%', "pct")
}

/// Table row name of a method.
pub fn method_name(kind: &MethodKind) -> String {
    match kind {
        MethodKind::Ssl => "SSL rotation".into(),
        MethodKind::SupervisedRandom => "Supervised (random init)".into(),
        MethodKind::SupervisedWeights => "Supervised (external init)".into(),
        MethodKind::Feature(k) => k.title().into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Ssl,
    SupervisedRandom,
    SupervisedWeights,
    Feature(FeatureKind),
}

impl MethodKind {
    fn dir_prefix(&self) -> String {
        match self {
            MethodKind::Ssl => "ssl".into(),
            MethodKind::SupervisedRandom => "supervised-random".into(),
            MethodKind::SupervisedWeights => "supervised-weights".into(),
            MethodKind::Feature(k) => k.as_str().into(),
        }
    }
}

impl Experiment {
    pub fn open(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let c = &cfg.corpus;
        let corpus = Corpus::load(&c.manifest(), &c.annotations(), &c.frame_store())?;
        Ok(Experiment { cfg, corpus })
    }

    pub fn folds(&self) -> Result<Vec<FoldSplit>> {
        split_folds(
            &self.corpus.video_ids(),
            self.cfg.folds.n_folds,
            self.cfg.seed,
            self.cfg.folds.ratios,
        )
    }

    /// The saved split under the run root when present, otherwise recomputed.
    pub fn fold(&self, k: u32) -> Result<FoldSplit> {
        let saved = self.fold_path(k);
        if saved.is_file() {
            return FoldSplit::load(&saved);
        }
        self.folds()?
            .into_iter()
            .find(|f| f.fold_id == k)
            .ok_or_else(|| Error::Config(format!("fold {k} out of range (n_folds = {})", self.cfg.folds.n_folds)))
    }

    pub fn fold_path(&self, k: u32) -> PathBuf {
        self.cfg.run_root.join("folds").join(format!("fold_{k}.json"))
    }

    pub fn save_folds(&self) -> Result<Vec<PathBuf>> {
        let dir = self.cfg.run_root.join("folds");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.folds()?
            .iter()
            .map(|f| {
                let p = self.fold_path(f.fold_id);
                f.save(&p)?;
                Ok(p)
            })
            .collect()
    }

    pub fn frames(&self, fold: &FoldSplit, split: &str) -> Result<Vec<FrameSample>> {
        self.corpus.labeled_frames(fold.split(split)?)
    }

    pub fn run_dir(&self, fold_id: u32, name: &str) -> PathBuf {
        self.cfg.run_root.join(format!("fold_{fold_id}")).join(name)
    }

    pub fn method_dir(&self, fold_id: u32, method: MethodKind, fraction: f64) -> PathBuf {
        self.run_dir(fold_id, &format!("{}_{}", method.dir_prefix(), fraction_tag(fraction)))
    }

    pub fn feature_cache(&self) -> FeatureCache {
        FeatureCache::new(self.cfg.run_root.join("features"))
    }

    pub fn load_fold_data(&self, fold: &FoldSplit) -> Result<FoldData> {
        let crop = self.cfg.pipeline.crop_size;
        let train = FramePool::load(&self.corpus.store, &self.frames(fold, "train")?, crop)?;
        let val = EvalSet::images(&self.corpus.store, &self.frames(fold, "val")?, &self.cfg.pipeline)?;
        Ok(FoldData {
            fold: fold.clone(),
            train,
            val,
        })
    }

    /// Seeded label subset of the fold's training frames; every method sees
    /// the same subset for a given seed, fold and fraction.
    pub fn labeled_subset(&self, fold: &FoldSplit, frames: &[FrameSample], fraction: f64) -> Result<LabeledSubset> {
        let idx = fold.fold_id as u64 * 1_000_000 + (fraction * 1e4).round() as u64;
        subsample_labels(fold, frames, fraction, derive_seed(self.cfg.seed, "sample", idx))
    }

    fn labeled_indices(&self, data: &FoldData, fraction: f64) -> Result<Vec<usize>> {
        let frames: Vec<FrameSample> = data
            .train
            .keys
            .iter()
            .zip(&data.train.labels)
            .map(|((v, t), l)| FrameSample {
                video_id: v.clone(),
                timestamp_s: *t,
                label: *l,
            })
            .collect();
        let subset = self.labeled_subset(&data.fold, &frames, fraction)?;
        data.train.indices_of(&subset.frame_refs)
    }

    fn stamp(&self, mut r: TrainResult) -> TrainResult {
        r.meta.config_hash = self.cfg.hash();
        r.meta.crop_size = self.cfg.pipeline.crop_size;
        r
    }

    pub fn pretrain(&self, data: &FoldData) -> Result<TrainResult> {
        let seed = derive_seed(self.cfg.seed, "pretrain", data.fold.fold_id as u64);
        let r = train::pretrain(
            &self.cfg.model,
            &data.train,
            Some(&data.val),
            &self.cfg.pretrain,
            &self.cfg.pipeline,
            seed,
        )?;
        Ok(self.stamp(r))
    }

    pub fn finetune(&self, data: &FoldData, pretext: &Model, fraction: f64) -> Result<TrainResult> {
        let labeled = self.labeled_indices(data, fraction)?;
        let seed = derive_seed(self.cfg.seed, "finetune", data.fold.fold_id as u64);
        let r = train::finetune(
            pretext,
            &data.train,
            &labeled,
            &data.val,
            &self.cfg.finetune,
            &self.cfg.pipeline,
            seed,
        )?;
        Ok(self.stamp(r))
    }

    pub fn train_supervised(&self, data: &FoldData, init: &Init, fraction: f64) -> Result<TrainResult> {
        let labeled = self.labeled_indices(data, fraction)?;
        let seed = derive_seed(self.cfg.seed, "supervised", data.fold.fold_id as u64);
        let r = train::train_supervised(
            &self.cfg.model,
            init,
            &data.train,
            &labeled,
            &data.val,
            &self.cfg.supervised,
            &self.cfg.pipeline,
            seed,
        )?;
        Ok(self.stamp(r))
    }

    /// Descriptors of a split's frames through the feature cache.
    pub fn split_features(&self, kind: FeatureKind, frames: &[FrameSample]) -> Result<Vec<Vec<f32>>> {
        compute_features(
            kind,
            &self.corpus.store,
            frames,
            &self.cfg.pipeline,
            Some(&self.feature_cache()),
        )
    }

    pub fn train_baseline(&self, fold: &FoldSplit, kind: FeatureKind, fraction: f64) -> Result<TrainResult> {
        let train_frames = self.frames(fold, "train")?;
        let subset = self.labeled_subset(fold, &train_frames, fraction)?;
        let wanted: std::collections::HashSet<&(String, u32)> = subset.frame_refs.iter().collect();
        let labeled: Vec<FrameSample> = train_frames
            .into_iter()
            .filter(|f| wanted.contains(&(f.video_id.clone(), f.timestamp_s)))
            .collect();
        let features = self.split_features(kind, &labeled)?;
        let labels: Vec<ClassLabel> = labeled
            .iter()
            .map(|f| f.label.expect("corpus frames are labeled"))
            .collect();
        let val_frames = self.frames(fold, "val")?;
        let val = EvalSet::features(&val_frames, self.split_features(kind, &val_frames)?)?;
        let seed = derive_seed(self.cfg.seed, "baseline", fold.fold_id as u64);
        let r = train_feature_classifier(kind, &features, &labels, &val, &self.cfg.supervised, seed)?;
        Ok(self.stamp(r))
    }

    /// Metrics and per-video timelines on one split of a fold.
    pub fn evaluate(&self, predictor: &Predictor, fold: &FoldSplit, split: &str) -> Result<Evaluation> {
        let frames = self.frames(fold, split)?;
        if frames.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let truth: Vec<ClassLabel> = frames
            .iter()
            .map(|f| f.label.expect("corpus frames are labeled"))
            .collect();
        let preds: Vec<(ClassLabel, f64)> = match predictor {
            Predictor::Oracle => truth.iter().map(|&l| (l, 1.0)).collect(),
            Predictor::Model(model) => {
                let set = match (model.config.kind, model.config.descriptor) {
                    (BackboneKind::Features, Some(kind)) => {
                        EvalSet::features(&frames, self.split_features(kind, &frames)?)?
                    }
                    _ => EvalSet::images(&self.corpus.store, &frames, &self.cfg.pipeline)?,
                };
                predict(model, &set)?
            }
        };
        let labels: Vec<ClassLabel> = preds.iter().map(|p| p.0).collect();
        let cm = confusion(&labels, &truth)?;
        let keys: Vec<(String, u32)> = frames.iter().map(|f| (f.video_id.clone(), f.timestamp_s)).collect();
        Ok(Evaluation {
            report: MetricsReport::from_confusion(fold.fold_id, split, cm),
            timelines: build_timelines(&keys, &preds, &truth)?,
        })
    }

    /// `metrics.json`, `timelines/<video>.{png,txt}` and `errors/` under `dir`.
    pub fn write_evaluation(&self, ev: &Evaluation, dir: &Path) -> Result<()> {
        ev.report.save(&dir.join("metrics.json"))?;
        for tl in &ev.timelines {
            render_timeline(tl, &dir.join("timelines").join(&tl.video_id), &self.cfg.eval.timeline)?;
        }
        export_errors(
            &ev.timelines,
            &self.corpus.store,
            self.cfg.eval.top_k_errors,
            &dir.join("errors"),
        )?;
        Ok(())
    }

    pub fn run_record(
        &self,
        method: MethodKind,
        fraction: Option<f64>,
        fold: &FoldSplit,
        seed: u64,
    ) -> Result<RunRecord> {
        let mut inputs = BTreeMap::new();
        inputs.insert("manifest".into(), file_hash(&self.cfg.corpus.manifest())?);
        inputs.insert("annotations".into(), file_hash(&self.cfg.corpus.annotations())?);
        inputs.insert(
            "fold".into(),
            sha256_hex(&serde_json::to_vec(fold).map_err(|e| Error::json("fold", e))?),
        );
        Ok(RunRecord {
            method: method_name(&method),
            fraction,
            fold_id: fold.fold_id,
            seed,
            config_hash: self.cfg.hash(),
            inputs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_tags() {
        assert_eq!(fraction_tag(0.05), "5pct");
        assert_eq!(fraction_tag(1.0), "100pct");
        assert_eq!(fraction_tag(0.15), "15pct");
    }
}
