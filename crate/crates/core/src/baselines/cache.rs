//! On-disk feature cache: `<root>/<kind>.bin` with a `<kind>.json` schema sidecar.
//!
//! Record layout (little-endian): `u32` id length, id bytes, `u32` timestamp,
//! `u8` kind code, `u32` dim, `dim` x `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FeatureKind;
use crate::error::{Error, Result};

pub type FrameKey = (String, u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Schema {
    kind: FeatureKind,
    dim: usize,
    records: usize,
    layout: String,
}

const LAYOUT: &str = "u32 id_len, id utf8, u32 timestamp_s, u8 kind, u32 dim, f32[dim]; little-endian";

#[derive(Debug, Clone)]
pub struct FeatureCache {
    root: PathBuf,
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn paths(&self, kind: FeatureKind) -> (PathBuf, PathBuf) {
        (
            self.root.join(format!("{kind}.bin")),
            self.root.join(format!("{kind}.json")),
        )
    }

    /// Replaces the cache for `kind`. The data file is written to a temporary
    /// name and renamed, so readers never observe a partial file.
    pub fn write(&self, kind: FeatureKind, records: &BTreeMap<FrameKey, Vec<f32>>) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let (bin, json) = self.paths(kind);
        let mut buf = Vec::new();
        for ((id, t), values) in records {
            if values.len() != kind.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "{kind} feature of {id}@{t} has {} values, expected {}",
                    values.len(),
                    kind.dim()
                )));
            }
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            buf.extend_from_slice(&t.to_le_bytes());
            buf.push(kind as u8);
            buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let tmp = bin.with_extension("bin.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &bin).map_err(|e| Error::io(&bin, e))?;
        let schema = Schema {
            kind,
            dim: kind.dim(),
            records: records.len(),
            layout: LAYOUT.into(),
        };
        let text = serde_json::to_string_pretty(&schema).map_err(|e| Error::json(&json, e))?;
        fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
    }

    /// Cached features for `kind`, or `None` when absent.
    pub fn read(&self, kind: FeatureKind) -> Result<Option<BTreeMap<FrameKey, Vec<f32>>>> {
        let (bin, json) = self.paths(kind);
        if !bin.exists() || !json.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let schema: Schema = serde_json::from_str(&text).map_err(|e| Error::json(&json, e))?;
        if schema.kind != kind || schema.dim != kind.dim() {
            return Ok(None);
        }
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let corrupt = || Error::Decode {
            path: bin.clone(),
            reason: "truncated feature cache".into(),
        };
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(corrupt)?;
            pos += n;
            Ok(s)
        };
        let mut out = BTreeMap::new();
        for _ in 0..schema.records {
            let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let id = String::from_utf8(take(len)?.to_vec()).map_err(|_| corrupt())?;
            let t = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
            let code = take(1)?[0];
            let dim = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            if code != kind as u8 || dim != schema.dim {
                return Err(corrupt());
            }
            let values = take(dim * 4)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            out.insert((id, t), values);
        }
        Ok(Some(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path());
        assert!(cache.read(FeatureKind::Blob).unwrap().is_none());
        let mut records = BTreeMap::new();
        records.insert(
            ("v1".to_string(), 3),
            (0..11).map(|i| i as f32 * 0.25).collect::<Vec<_>>(),
        );
        records.insert(("v2".to_string(), 0), vec![f32::MIN_POSITIVE; 11]);
        cache.write(FeatureKind::Blob, &records).unwrap();
        assert_eq!(cache.read(FeatureKind::Blob).unwrap().unwrap(), records);
        assert!(cache.write(FeatureKind::Color, &records).is_err());
    }
}
