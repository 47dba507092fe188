//! Experiment configuration: one TOML tree with every default baked in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Ratios;
use crate::error::{Error, Result};
use crate::eval::TimelineStyle;
use crate::model::BackboneConfig;
use crate::rng;
use crate::scrub::Smoothing;
use crate::synth::SynthConfig;
use crate::train::{FinetuneConfig, ImagePipeline, PretrainConfig};

pub const CORPUS_ROOT_ENV: &str = "ENDOSCRUB_CORPUS_ROOT";
pub const RUN_ROOT_ENV: &str = "ENDOSCRUB_RUN_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusPaths {
    /// Holds `manifest.json`, `annotations.csv` and `frames/` unless the
    /// individual paths are set.
    pub root: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_store: Option<PathBuf>,
}

impl Default for CorpusPaths {
    fn default() -> Self {
        CorpusPaths {
            root: PathBuf::from("corpus"),
            manifest: None,
            annotations: None,
            frame_store: None,
        }
    }
}

impl CorpusPaths {
    pub fn manifest(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.root.join("manifest.json"))
    }

    pub fn annotations(&self) -> PathBuf {
        self.annotations
            .clone()
            .unwrap_or_else(|| self.root.join("annotations.csv"))
    }

    pub fn frame_store(&self) -> PathBuf {
        self.frame_store.clone().unwrap_or_else(|| self.root.join("frames"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldSettings {
    pub n_folds: u32,
    /// Train / validation / test shares of the videos.
    pub ratios: Ratios,
}

impl Default for FoldSettings {
    fn default() -> Self {
        FoldSettings {
            n_folds: 5,
            ratios: [0.45, 0.20, 0.35],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub timeline: TimelineStyle,
    /// Misclassified frames exported per evaluation.
    pub top_k_errors: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            timeline: TimelineStyle::default(),
            top_k_errors: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScrubSettings {
    pub margin_s: u32,
    pub smoothing: Smoothing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; every component derives its own stream from it.
    pub seed: u64,
    pub corpus: CorpusPaths,
    pub run_root: PathBuf,
    pub folds: FoldSettings,
    pub model: BackboneConfig,
    pub pipeline: ImagePipeline,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub supervised: FinetuneConfig,
    pub label_fractions: Vec<f64>,
    pub eval: EvalSettings,
    pub scrub: ScrubSettings,
    pub synth: SynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            corpus: CorpusPaths::default(),
            run_root: PathBuf::from("runs"),
            folds: FoldSettings::default(),
            model: BackboneConfig::reference(),
            pipeline: ImagePipeline::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            supervised: FinetuneConfig::default(),
            label_fractions: vec![0.02, 0.05, 0.10, 0.15, 1.0],
            eval: EvalSettings::default(),
            scrub: ScrubSettings::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and applies the environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn apply_env(&mut self) {
        if let Some(root) = std::env::var_os(CORPUS_ROOT_ENV) {
            self.corpus.root = PathBuf::from(root);
        }
        if let Some(root) = std::env::var_os(RUN_ROOT_ENV) {
            self.run_root = PathBuf::from(root);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds.n_folds == 0 {
            return Err(Error::Config("n_folds must be positive".into()));
        }
        if self.label_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config("label fractions must be in (0, 1]".into()));
        }
        if self.model.input_size != self.pipeline.input_size {
            return Err(Error::Config(format!(
                "model input {} differs from pipeline input {}",
                self.model.input_size, self.pipeline.input_size
            )));
        }
        self.model.validate()?;
        self.pipeline.augment.validate()?;
        self.finetune.validate()?;
        self.supervised.validate()?;
        self.synth.validate()
    }

    /// SHA-256 of the canonical JSON form, with filesystem locations left out
    /// so that moving a corpus or run directory keeps the hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.corpus = CorpusPaths::default();
        c.run_root = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        rng::sha256_hex(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BackboneKind;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::default();
        assert_eq!(c.folds.n_folds, 5);
        assert_eq!(c.label_fractions, vec![0.02, 0.05, 0.10, 0.15, 1.0]);
        assert_eq!(c.pretrain.batch_size, 80);
        assert_eq!(c.pretrain.epochs, 150);
        assert_eq!(c.finetune.batch_size, 100);
        assert_eq!(c.finetune.epochs, 40);
        assert_eq!(c.finetune.base_lr, 1e-3);
        assert_eq!(c.pipeline.crop_size, 640);
        assert_eq!(c.pipeline.input_size, 224);
        assert_eq!(c.model.kind, BackboneKind::ReferenceResidual50);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_keeps_hash() {
        let mut c = ExperimentConfig::default();
        c.seed = 17;
        c.finetune.base_lr = 3e-4;
        c.scrub.smoothing = Smoothing::Median(5);
        let text = c.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(ExperimentConfig::default().hash(), c.hash());

        let mut moved = c.clone();
        moved.corpus.root = "/elsewhere".into();
        moved.run_root = "/tmp/runs".into();
        assert_eq!(moved.hash(), c.hash());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = ExperimentConfig::from_toml_str("seed = 3\n[finetune]\nepochs = 5\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.finetune.epochs, 5);
        assert_eq!(c.finetune.batch_size, 100);
        assert!(matches!(
            ExperimentConfig::from_toml_str("sed = 3\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("label_fractions = [0.0]\n"),
            Err(Error::Config(_))
        ));
    }
}
