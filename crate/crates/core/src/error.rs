use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed annotation row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("segments of video `{video_id}` overlap at second {at}")]
    Overlap { video_id: String, at: u32 },

    #[error("video `{video_id}` has no covering segment at second {at}")]
    Gap { video_id: String, at: u32 },

    #[error("segment of video `{video_id}` ends at {end_s} past duration {duration_s}")]
    Bounds {
        video_id: String,
        end_s: u32,
        duration_s: u32,
    },

    #[error("unknown video `{0}`")]
    UnknownVideo(String),

    #[error("could not decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("video `{video_id}` has no frame for second {timestamp_s}")]
    MissingTimestamp { video_id: String, timestamp_s: u32 },

    #[error("invalid split ratios {0:?}")]
    Ratio([f64; 3]),

    #[error("corpus is empty or smaller than the number of folds")]
    EmptyCorpus,

    #[error("label fraction {0} outside (0, 1]")]
    Fraction(f64),

    #[error("image {height}x{width} is smaller than crop size {size}")]
    TooSmall { height: usize, width: usize, size: usize },

    #[error("normalization std must be positive, got {0:?}")]
    ZeroStd([f32; 3]),

    #[error("rotation requires a square image, got {height}x{width}")]
    NonSquare { height: usize, width: usize },

    #[error("cannot build a batch from zero images")]
    EmptyBatch,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("external weights do not match the backbone: {0}")]
    WeightMismatch(String),

    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("prediction and truth lengths differ ({preds} vs {truth})")]
    LengthMismatch { preds: usize, truth: usize },

    #[error("at least two fold values are required, got {0}")]
    TooFewFolds(usize),

    #[error("video `{video_id}` is missing frames for second {timestamp_s}")]
    MissingFrames { video_id: String, timestamp_s: u32 },

    #[error("smoothing window must be odd and positive, got {0}")]
    EvenWindow(usize),

    #[error("timestamps are not contiguous from 0 (expected {expected}, found {found})")]
    NonContiguous { expected: u32, found: u32 },

    #[error("margin must be non-negative, got {0}")]
    NegativeMargin(i64),

    #[error("edit list does not match the video: {0}")]
    IntervalMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Broad failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Stable identifier for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedRow { .. } => "MalformedRow",
            Error::Overlap { .. } => "OverlapError",
            Error::Gap { .. } => "GapError",
            Error::Bounds { .. } => "BoundsError",
            Error::UnknownVideo(_) => "UnknownVideo",
            Error::Decode { .. } => "DecodeError",
            Error::MissingTimestamp { .. } => "MissingTimestamp",
            Error::Ratio(_) => "RatioError",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::Fraction(_) => "FractionError",
            Error::TooSmall { .. } => "TooSmall",
            Error::ZeroStd(_) => "ZeroStd",
            Error::NonSquare { .. } => "NonSquare",
            Error::EmptyBatch => "EmptyBatch",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::WeightMismatch(_) => "WeightMismatch",
            Error::VersionMismatch(_) => "VersionMismatch",
            Error::EmptyDataset => "EmptyDataset",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::TooFewFolds(_) => "TooFewFolds",
            Error::MissingFrames { .. } => "MissingFrames",
            Error::EvenWindow(_) => "EvenWindow",
            Error::NonContiguous { .. } => "NonContiguous",
            Error::NegativeMargin(_) => "NegativeMargin",
            Error::IntervalMismatch(_) => "IntervalMismatch",
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IOError",
            Error::Json { .. } => "JsonError",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::Ratio(_)
            | Error::Fraction(_)
            | Error::EvenWindow(_)
            | Error::NegativeMargin(_) => ErrorClass::Config,
            Error::MalformedRow { .. }
            | Error::Overlap { .. }
            | Error::Gap { .. }
            | Error::Bounds { .. }
            | Error::UnknownVideo(_)
            | Error::Decode { .. }
            | Error::MissingTimestamp { .. }
            | Error::EmptyCorpus
            | Error::TooSmall { .. }
            | Error::NonSquare { .. }
            | Error::EmptyDataset
            | Error::LengthMismatch { .. }
            | Error::MissingFrames { .. }
            | Error::NonContiguous { .. }
            | Error::IntervalMismatch(_)
            | Error::WeightMismatch(_)
            | Error::VersionMismatch(_)
            | Error::Json { .. } => ErrorClass::Data,
            // a missing input is a data problem; other I/O failures are not
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ErrorClass::Data,
            _ => ErrorClass::Runtime,
        }
    }
}
