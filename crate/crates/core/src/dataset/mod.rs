//! Corpus ingestion: annotations, per-second labels, frame extraction, fold
//! splits, label subsampling and corpus statistics.

mod annotations;
mod folds;
mod frames;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use annotations::{
    derive_frame_labels, parse_annotations, parse_annotations_str, validate_segments, write_annotations, Annotations,
};
pub use folds::{split_folds, subsample_labels, subsample_size, FoldSplit, LabeledSubset, Ratios};
pub use frames::{extract_frames, ExtractedFrames, FrameDirVideo, FrameStore, VideoMeta, VideoWriter};
pub use frames::{read_png, write_png};
pub use stats::{dataset_stats, irrelevant_ratio, StatsReport};

/// Binary frame class. `Irrelevant` (out-of-body) is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Relevant,
    Irrelevant,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Relevant, ClassLabel::Irrelevant];

    /// Logit index: relevant = 0, irrelevant = 1.
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Relevant => 0,
            ClassLabel::Irrelevant => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(ClassLabel::Relevant),
            1 => Some(ClassLabel::Irrelevant),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == ClassLabel::Irrelevant
    }

    pub fn other(self) -> Self {
        match self {
            ClassLabel::Relevant => ClassLabel::Irrelevant,
            ClassLabel::Irrelevant => ClassLabel::Relevant,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Relevant => "relevant",
            ClassLabel::Irrelevant => "irrelevant",
        }
    }

    /// Three-letter form used in run-length encodings.
    pub fn short(self) -> &'static str {
        match self {
            ClassLabel::Relevant => "rel",
            ClassLabel::Irrelevant => "irr",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "relevant" | "rel" => Ok(ClassLabel::Relevant),
            "irrelevant" | "irr" => Ok(ClassLabel::Irrelevant),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Rational frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Self {
        Fps { num, den }
    }

    pub fn integer(fps: u32) -> Self {
        Fps { num: fps, den: 1 }
    }

    /// Index of the source frame shown at the start of sample `k` when
    /// sampling at `rate` samples per second.
    pub fn frame_at(self, k: u64, rate: u32) -> u64 {
        k * self.num as u64 / (rate as u64 * self.den as u64)
    }

    /// Whole seconds covered by `n_frames` frames.
    pub fn whole_seconds(self, n_frames: u64) -> u64 {
        n_frames * self.den as u64 / self.num as u64
    }
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// One row of the corpus manifest JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub procedure_type: String,
    pub duration_s: u32,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoRecord {
    pub video_id: String,
    pub procedure_type: String,
    pub duration_s: u32,
    pub source_fps: Fps,
    /// Directory holding this video's extracted per-second frames.
    pub frame_store: PathBuf,
}

/// A labeled `[start_s, end_s)` span of one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start_s: u32,
    pub end_s: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentAnnotation {
    pub video_id: String,
    pub start_s: u32,
    pub end_s: u32,
    pub label: ClassLabel,
}

impl SegmentAnnotation {
    pub fn len(&self) -> u32 {
        self.end_s - self.start_s
    }

    pub fn is_empty(&self) -> bool {
        self.end_s <= self.start_s
    }
}

/// One per-second frame. The raster itself lives in a [`FrameStore`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameSample {
    pub video_id: String,
    pub timestamp_s: u32,
    pub label: Option<ClassLabel>,
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = std::collections::BTreeSet::new();
    for entry in &mut entries {
        if entry.duration_s < 1 {
            return Err(Error::Config(format!("video `{}` has zero duration", entry.video_id)));
        }
        if !seen.insert(entry.video_id.clone()) {
            return Err(Error::Config(format!(
                "duplicate video id `{}` in manifest",
                entry.video_id
            )));
        }
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
    }
    Ok(entries)
}

/// Writes the manifest with paths relative to the manifest's directory when possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let rel: Vec<ManifestEntry> = entries
        .iter()
        .map(|e| ManifestEntry {
            path: e
                .path
                .strip_prefix(base)
                .map(Path::to_path_buf)
                .unwrap_or_else(|_| e.path.clone()),
            ..e.clone()
        })
        .collect();
    let text = serde_json::to_string_pretty(&rel).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// A loaded corpus: video records, validated annotations, and the frame store.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub videos: Vec<VideoRecord>,
    pub annotations: Annotations,
    pub store: FrameStore,
}

impl Corpus {
    pub fn load(manifest: &Path, annotations: &Path, store_root: &Path) -> Result<Self> {
        let entries = load_manifest(manifest)?;
        let store = FrameStore::new(store_root);
        let durations: BTreeMap<String, u32> = entries.iter().map(|e| (e.video_id.clone(), e.duration_s)).collect();
        let annotations = parse_annotations(annotations, &durations)?;
        let videos = entries
            .iter()
            .map(|e| {
                let source_fps = FrameDirVideo::open(&e.path)
                    .map(|v| v.meta.fps())
                    .unwrap_or(Fps::integer(1));
                VideoRecord {
                    video_id: e.video_id.clone(),
                    procedure_type: e.procedure_type.clone(),
                    duration_s: e.duration_s,
                    source_fps,
                    frame_store: store.video_dir(&e.video_id),
                }
            })
            .collect();
        Ok(Corpus {
            videos,
            annotations,
            store,
        })
    }

    pub fn video_ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.video_id.clone()).collect()
    }

    pub fn video(&self, video_id: &str) -> Result<&VideoRecord> {
        self.videos
            .iter()
            .find(|v| v.video_id == video_id)
            .ok_or_else(|| Error::UnknownVideo(video_id.to_string()))
    }

    pub fn segments(&self, video_id: &str) -> &[SegmentAnnotation] {
        self.annotations.get(video_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Labeled per-second frames of the given videos, in id order then time order.
    pub fn labeled_frames<'a>(&self, ids: impl IntoIterator<Item = &'a String>) -> Result<Vec<FrameSample>> {
        let mut out = Vec::new();
        for id in ids {
            let video = self.video(id)?;
            out.extend(derive_frame_labels(video, self.segments(id))?);
        }
        Ok(out)
    }
}
