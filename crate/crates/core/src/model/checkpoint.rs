//! Binary container: magic, `u32` header length, JSON header, `u32` tensor
//! count, then per tensor `u32` name length, name, `u32` rank, `u64` dims and
//! little-endian `f32` data.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, BackboneConfig, HeadConfig, Init, Model};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"ESCRUBCK";
const TENSORS_MAGIC: &[u8; 8] = b"ESCRUBTN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretext,
    Finetune,
    Supervised,
    /// No network: predictions come from ground-truth labels. Used as an
    /// upper-bound reference when scrubbing.
    LabelOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub phase: Phase,
    pub seed: u64,
    pub epoch: u32,
    pub val_loss: Option<f64>,
    pub config_hash: String,
    pub backbone: Option<BackboneConfig>,
    pub head: Option<HeadConfig>,
    /// Center-crop size of the evaluation path.
    #[serde(default = "default_crop")]
    pub crop_size: usize,
}

fn default_crop() -> usize {
    640
}

impl CheckpointMeta {
    pub fn new(phase: Phase, seed: u64, epoch: u32, val_loss: Option<f64>, config_hash: impl Into<String>) -> Self {
        CheckpointMeta {
            version: CHECKPOINT_VERSION,
            phase,
            seed,
            epoch,
            val_loss,
            config_hash: config_hash.into(),
            backbone: None,
            head: None,
            crop_size: default_crop(),
        }
    }
}

type NamedTensor = (String, Vec<usize>, Vec<f32>);

fn encode_tensors(out: &mut impl Write, tensors: &[NamedTensor]) -> std::io::Result<()> {
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, shape, data) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::VersionMismatch("truncated container".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode_tensors(r: &mut Reader) -> Result<Vec<NamedTensor>> {
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::VersionMismatch("tensor name is not utf-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let data = r
            .take(count * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        out.push((name, shape, data));
    }
    Ok(out)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_container(path: &Path, meta: &CheckpointMeta, tensors: &[NamedTensor]) -> Result<()> {
    let header = serde_json::to_vec(meta).map_err(|e| Error::json(path, e))?;
    write_file(path, |w| {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        encode_tensors(w, tensors)
    })
}

/// Saves a model; `meta.backbone` and `meta.head` are filled from the model.
pub fn save_checkpoint(path: &Path, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    let meta = CheckpointMeta {
        backbone: Some(model.config.clone()),
        head: Some(model.head.config),
        ..meta.clone()
    };
    write_container(path, &meta, &model.named_tensors())
}

/// Saves a header-only checkpoint (used for the label oracle).
pub fn save_meta_only(path: &Path, meta: &CheckpointMeta) -> Result<()> {
    write_container(path, meta, &[])
}

fn parse_header<'a>(path: &Path, buf: &'a [u8]) -> Result<(CheckpointMeta, Reader<'a>)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(Error::VersionMismatch(format!("{}: not a checkpoint", path.display())));
    }
    let len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::VersionMismatch(format!("{}: unreadable header ({e})", path.display())))?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "{}: version {} (expected {CHECKPOINT_VERSION})",
            path.display(),
            meta.version
        )));
    }
    Ok((meta, r))
}

pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_header(path, &buf)?.0)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (meta, mut r) = parse_header(path, &buf)?;
    let (Some(backbone), Some(head)) = (&meta.backbone, &meta.head) else {
        return Err(Error::Config(format!(
            "{}: {:?} checkpoint holds no network",
            path.display(),
            meta.phase
        )));
    };
    let tensors = decode_tensors(&mut r)?;
    let mut model = build_model(backbone, head.n_out, &Init::Random, meta.seed)?;
    model.head = super::ClassifierHead::new(
        model.feature_dim(),
        *head,
        &mut crate::rng::stream(meta.seed, "init", 1),
    );
    model.load_tensors(&tensors)?;
    Ok((model, meta))
}

/// Writes a standalone named-tensor file (e.g. external backbone weights).
pub fn write_tensors(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    write_file(path, |w| {
        w.write_all(TENSORS_MAGIC)?;
        encode_tensors(w, tensors)
    })
}

/// Reads named tensors from a tensor file or from a checkpoint.
pub fn read_tensors(path: &Path) -> Result<Vec<NamedTensor>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.starts_with(TENSORS_MAGIC) {
        let mut r = Reader { buf: &buf, pos: 8 };
        return decode_tensors(&mut r).map_err(|e| Error::WeightMismatch(format!("{}: {e}", path.display())));
    }
    match parse_header(path, &buf) {
        Ok((_, mut r)) => decode_tensors(&mut r),
        Err(_) => Err(Error::WeightMismatch(format!("{}: not a weight file", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackboneConfig, Mode};
    use crate::nn::Tensor;

    fn model() -> Model {
        let cfg = BackboneConfig {
            stem_pool: 8,
            ..BackboneConfig::small(16)
        };
        build_model(&cfg, 4, &Init::Random, 11).unwrap()
    }

    fn input() -> Tensor {
        Tensor::from_vec(
            [2, 3, 224, 224],
            (0..2 * 3 * 224 * 224).map(|i| (i % 17) as f32 * 0.1 - 0.8).collect(),
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut m = model();
        // move batch-norm running stats away from their defaults
        m.forward(&input(), Mode::Train).unwrap();
        m.swap_head(2, 4);
        let meta = CheckpointMeta::new(Phase::Finetune, 11, 7, Some(0.123456789012345), "abc");
        save_checkpoint(&path, &m, &meta).unwrap();
        let (loaded, meta2) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.named_tensors(), m.named_tensors());
        assert_eq!(loaded.infer(&input()).unwrap(), m.infer(&input()).unwrap());
        assert_eq!(meta2.phase, Phase::Finetune);
        assert_eq!(meta2.seed, 11);
        assert_eq!(meta2.epoch, 7);
        assert_eq!(meta2.val_loss.unwrap().to_bits(), 0.123456789012345f64.to_bits());
    }

    #[test]
    fn corrupted_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model(), &CheckpointMeta::new(Phase::Pretext, 1, 0, None, "")).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[14] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::VersionMismatch(_))));
        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::VersionMismatch(_))));
    }

    #[test]
    fn future_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut meta = CheckpointMeta::new(Phase::Pretext, 1, 0, None, "");
        meta.version = 99;
        save_meta_only(&path, &meta).unwrap();
        assert!(matches!(read_checkpoint_meta(&path), Err(Error::VersionMismatch(_))));
    }

    #[test]
    fn external_weights_load_into_backbone() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let source = model();
        write_tensors(&path, &source.named_tensors()).unwrap();
        let cfg = source.config.clone();
        let m = build_model(&cfg, 2, &Init::External(path.clone()), 99).unwrap();
        let x = input();
        assert_eq!(m.features(&x).unwrap(), source.features(&x).unwrap());

        let other = BackboneConfig { feature_dim: 24, ..cfg };
        assert!(matches!(
            build_model(&other, 2, &Init::External(path), 99),
            Err(Error::WeightMismatch(_))
        ));
    }
}
