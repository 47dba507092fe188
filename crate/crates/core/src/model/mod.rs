//! Backbone + MLP-2 classifier, head swapping and checkpoints.

mod backbone;
mod checkpoint;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::FeatureKind;
use crate::error::{Error, Result};
use crate::nn::{Dropout, Linear, Param, Parameterized, Relu, Tensor};
use crate::preprocess::ImageTensor;
use crate::rng::{self, Stream};

pub use backbone::ResidualNet;
pub use checkpoint::{
    load_checkpoint, read_checkpoint_meta, read_tensors, save_checkpoint, save_meta_only, write_tensors,
    CheckpointMeta, Phase, CHECKPOINT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    ReferenceResidual50,
    SmallResidual,
    /// Identity over precomputed handcrafted feature vectors.
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub feature_dim: usize,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    /// Average-pooling factor applied to the input of the small network.
    #[serde(default = "default_stem_pool")]
    pub stem_pool: usize,
    /// Descriptor feeding a `features` backbone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<FeatureKind>,
}

fn default_input_size() -> usize {
    224
}

fn default_stem_pool() -> usize {
    8
}

impl BackboneConfig {
    pub fn small(feature_dim: usize) -> Self {
        BackboneConfig {
            kind: BackboneKind::SmallResidual,
            feature_dim,
            input_size: 224,
            stem_pool: default_stem_pool(),
            descriptor: None,
        }
    }

    pub fn reference() -> Self {
        BackboneConfig {
            kind: BackboneKind::ReferenceResidual50,
            feature_dim: 2048,
            input_size: 224,
            stem_pool: 1,
            descriptor: None,
        }
    }

    pub fn features(kind: FeatureKind) -> Self {
        BackboneConfig {
            kind: BackboneKind::Features,
            feature_dim: kind.dim(),
            input_size: 224,
            stem_pool: 1,
            descriptor: Some(kind),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        match self.kind {
            BackboneKind::ReferenceResidual50 if self.feature_dim != 2048 => {
                Err(Error::Config("reference-residual-50 has 2048 features".into()))
            }
            BackboneKind::SmallResidual if self.stem_pool == 0 || self.input_size / self.stem_pool < 16 => {
                Err(Error::Config(format!(
                    "stem_pool {} too large for input {}",
                    self.stem_pool, self.input_size
                )))
            }
            BackboneKind::Features => match self.descriptor {
                Some(d) if d.dim() == self.feature_dim => Ok(()),
                _ => Err(Error::Config("features backbone needs a matching descriptor".into())),
            },
            _ => Ok(()),
        }
    }

    /// Whether the model consumes images (as opposed to feature vectors).
    pub fn takes_images(&self) -> bool {
        self.kind != BackboneKind::Features
    }
}

#[derive(Debug, Clone)]
pub enum Backbone {
    Residual(ResidualNet),
    Identity { dim: usize },
}

impl Backbone {
    fn build(cfg: &BackboneConfig, rng: &mut Stream) -> Self {
        match cfg.kind {
            BackboneKind::SmallResidual => Backbone::Residual(ResidualNet::small(cfg.feature_dim, cfg.stem_pool, rng)),
            BackboneKind::ReferenceResidual50 => Backbone::Residual(ResidualNet::reference50(rng)),
            BackboneKind::Features => Backbone::Identity { dim: cfg.feature_dim },
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Backbone::Residual(net) => net.feature_dim,
            Backbone::Identity { dim } => *dim,
        }
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        match self {
            Backbone::Residual(net) => net.forward(x),
            Backbone::Identity { .. } => x.clone().flatten(),
        }
    }

    fn backward(&mut self, dfeat: &Tensor) {
        if let Backbone::Residual(net) = self {
            net.backward(dfeat);
        }
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        match self {
            Backbone::Residual(net) => net.infer(x),
            Backbone::Identity { .. } => x.clone().flatten(),
        }
    }
}

impl Parameterized for Backbone {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        if let Backbone::Residual(net) = self {
            net.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        if let Backbone::Residual(net) = self {
            net.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden_units: usize,
    pub dropout_rate: f32,
    pub n_out: usize,
}

impl HeadConfig {
    pub fn mlp2(n_out: usize) -> Self {
        HeadConfig {
            hidden_units: 512,
            dropout_rate: 0.1,
            n_out,
        }
    }
}

/// MLP-2: `Linear(F, 512) -> ReLU -> Dropout -> Linear(512, n_out)`.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub config: HeadConfig,
    pub fc1: Linear,
    relu: Relu,
    pub dropout: Dropout,
    pub fc2: Linear,
}

impl ClassifierHead {
    pub fn new(feature_dim: usize, config: HeadConfig, rng: &mut Stream) -> Self {
        ClassifierHead {
            config,
            fc1: Linear::new("head.fc1", feature_dim, config.hidden_units, rng),
            relu: Relu::default(),
            dropout: Dropout::new(config.dropout_rate),
            fc2: Linear::new("head.fc2", config.hidden_units, config.n_out, rng),
        }
    }

    /// Exact parameter count: `F*h + h + h*n_out + n_out`.
    pub fn param_count(feature_dim: usize, hidden: usize, n_out: usize) -> usize {
        feature_dim * hidden + hidden + hidden * n_out + n_out
    }

    pub fn forward(&mut self, feat: &Tensor, rng: &mut Stream) -> Tensor {
        let h = self.relu.forward(&self.fc1.forward(feat));
        let h = self.dropout.forward(&h, rng);
        self.fc2.forward(&h)
    }

    pub fn backward(&mut self, dlogits: &Tensor) -> Tensor {
        let g = self.fc2.backward(dlogits);
        let g = self.dropout.backward(&g);
        let g = self.relu.backward(&g);
        self.fc1.backward(&g)
    }

    pub fn infer(&self, feat: &Tensor) -> Tensor {
        self.fc2.infer(&Relu::infer(&self.fc1.infer(feat)))
    }
}

impl Parameterized for ClassifierHead {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.fc1.visit(f);
        self.fc2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Random,
    /// Backbone tensors from a named-tensor file (see [`write_tensors`]).
    External(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: BackboneConfig,
    pub backbone: Backbone,
    pub head: ClassifierHead,
    dropout_rng: Stream,
}

pub fn build_model(cfg: &BackboneConfig, n_out: usize, init: &Init, seed: u64) -> Result<Model> {
    cfg.validate()?;
    if n_out < 2 {
        return Err(Error::Config(format!("n_out must be at least 2, got {n_out}")));
    }
    let mut rng = rng::stream(seed, "init", 0);
    let mut backbone = Backbone::build(cfg, &mut rng);
    if let Init::External(path) = init {
        let tensors = read_tensors(path)?;
        load_into(&mut backbone, &tensors, true)?;
    }
    let head = ClassifierHead::new(backbone.feature_dim(), HeadConfig::mlp2(n_out), &mut rng);
    Ok(Model {
        config: cfg.clone(),
        backbone,
        head,
        dropout_rng: rng::stream(seed, "dropout", 0),
    })
}

/// Copies named tensors into matching parameters. With `backbone_only`,
/// tensors outside the backbone are ignored; every target must be present.
fn load_into(
    target: &mut dyn Parameterized,
    tensors: &[(String, Vec<usize>, Vec<f32>)],
    backbone_only: bool,
) -> Result<()> {
    let by_name: std::collections::HashMap<&str, (&Vec<usize>, &Vec<f32>)> =
        tensors.iter().map(|(n, s, d)| (n.as_str(), (s, d))).collect();
    let mut problem = None;
    target.visit_mut(&mut |p| {
        if problem.is_some() {
            return;
        }
        match by_name.get(p.name.as_str()) {
            Some((shape, data)) if **shape == p.shape => p.value.copy_from_slice(data),
            Some((shape, _)) => {
                problem = Some(format!(
                    "{}: expected shape {:?}, file has {:?}",
                    p.name, p.shape, shape
                ))
            }
            None => problem = Some(format!("{} missing from weight file", p.name)),
        }
    });
    if let Some(reason) = problem {
        return Err(Error::WeightMismatch(reason));
    }
    if !backbone_only {
        let mut expected = 0;
        target.visit(&mut |_| expected += 1);
        if expected != tensors.len() {
            return Err(Error::WeightMismatch(format!(
                "{} tensors in file, model has {expected}",
                tensors.len()
            )));
        }
    }
    Ok(())
}

/// Stacks `[h, w, 3]` images into an NCHW batch.
pub fn batch_from_images(images: &[ImageTensor]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Ok(Tensor::zeros([0, 3, 0, 0]));
    };
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height, img.width) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "mixed image sizes {}x{} and {}x{}",
                h, w, img.height, img.width
            )));
        }
        data.extend(img.to_chw());
    }
    Ok(Tensor::from_vec([images.len(), 3, h, w], data))
}

/// Stacks feature vectors into a `[n, d, 1, 1]` batch.
pub fn batch_from_features(features: &[&[f32]]) -> Result<Tensor> {
    let d = features.first().map_or(0, |f| f.len());
    let mut data = Vec::with_capacity(features.len() * d);
    for f in features {
        if f.len() != d {
            return Err(Error::ShapeMismatch(format!("feature lengths {} and {}", d, f.len())));
        }
        data.extend_from_slice(f);
    }
    Ok(Tensor::matrix(features.len(), d, data))
}

impl Model {
    pub fn n_out(&self) -> usize {
        self.head.config.n_out
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    /// Replaces the head with a freshly initialized MLP-2; the backbone is untouched.
    pub fn swap_head(&mut self, n_out: usize, seed: u64) {
        let mut rng = rng::stream(seed, "head", n_out as u64);
        self.head = ClassifierHead::new(self.feature_dim(), HeadConfig::mlp2(n_out), &mut rng);
    }

    /// Reseeds the dropout stream consumed by training-mode forwards.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = rng::stream(seed, "dropout", 0);
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [_, c, h, w] = x.shape;
        let ok = match self.config.kind {
            BackboneKind::Features => c * h * w == self.config.feature_dim,
            _ => c == 3 && h == w && h >= 16,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "input {:?} for {:?} backbone",
                x.shape, self.config.kind
            )))
        }
    }

    /// Logits `[n, n_out, 1, 1]`. Train mode caches activations for
    /// [`Model::backward`] and applies dropout.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if x.batch() == 0 {
            return Ok(Tensor::zeros([0, self.n_out(), 1, 1]));
        }
        self.check_input(x)?;
        Ok(match mode {
            Mode::Eval => self.head.infer(&self.backbone.infer(x)),
            Mode::Train => {
                let feat = self.backbone.forward(x);
                self.head.forward(&feat, &mut self.dropout_rng)
            }
        })
    }

    /// Eval-mode forward without mutable access.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        if x.batch() == 0 {
            return Ok(Tensor::zeros([0, self.n_out(), 1, 1]));
        }
        self.check_input(x)?;
        Ok(self.head.infer(&self.backbone.infer(x)))
    }

    /// Backbone features in eval mode.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(self.backbone.infer(x))
    }

    /// Accumulates parameter gradients from d(loss)/d(logits).
    pub fn backward(&mut self, dlogits: &Tensor) {
        let dfeat = self.head.backward(dlogits);
        self.backbone.backward(&dfeat);
    }

    /// Every named tensor (parameters and buffers), in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push((p.name.clone(), p.shape.clone(), p.value.clone())));
        out
    }

    fn load_tensors(&mut self, tensors: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        load_into(self, tensors, false)
    }
}

impl Parameterized for Model {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.backbone.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.backbone.visit_mut(f);
        self.head.visit_mut(f);
    }
}
