//! Frame-directory videos and the per-second frame store.
//!
//! A video on disk is a directory with a `video.json` header and one PNG per
//! source frame (`00000000.png`, `00000001.png`, ...). The frame store keeps
//! one PNG per sampled second under `<root>/<video_id>/<t:06>.png`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

use super::Fps;
use crate::error::{Error, Result};

const VIDEO_HEADER: &str = "video.json";
const STORE_INDEX: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub fps_num: u32,
    pub fps_den: u32,
    pub width: u32,
    pub height: u32,
    pub n_frames: u64,
}

impl VideoMeta {
    pub fn fps(&self) -> Fps {
        Fps::new(self.fps_num, self.fps_den)
    }

    pub fn duration_s(&self) -> u32 {
        self.fps().whole_seconds(self.n_frames) as u32
    }
}

#[derive(Debug, Clone)]
pub struct FrameDirVideo {
    pub root: PathBuf,
    pub meta: VideoMeta,
}

impl FrameDirVideo {
    pub fn open(root: &Path) -> Result<Self> {
        let header = root.join(VIDEO_HEADER);
        let text = fs::read_to_string(&header).map_err(|e| Error::io(&header, e))?;
        let meta: VideoMeta = serde_json::from_str(&text).map_err(|e| Error::json(&header, e))?;
        if meta.fps_num == 0 || meta.fps_den == 0 {
            return Err(Error::Decode {
                path: header,
                reason: "frame rate must be positive".into(),
            });
        }
        Ok(FrameDirVideo {
            root: root.to_path_buf(),
            meta,
        })
    }

    pub fn create(root: &Path, fps: Fps, width: u32, height: u32) -> Result<VideoWriter> {
        if fps.num == 0 || fps.den == 0 {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(VideoWriter {
            root: root.to_path_buf(),
            meta: VideoMeta {
                fps_num: fps.num,
                fps_den: fps.den,
                width,
                height,
                n_frames: 0,
            },
        })
    }

    pub fn frame_path(&self, index: u64) -> PathBuf {
        self.root.join(format!("{index:08}.png"))
    }

    pub fn read_frame(&self, index: u64) -> Result<RgbImage> {
        read_png(&self.frame_path(index))
    }

    pub fn duration_s(&self) -> u32 {
        self.meta.duration_s()
    }

    /// Second that source frame `index` belongs to.
    pub fn second_of(&self, index: u64) -> u32 {
        (index * self.meta.fps_den as u64 / self.meta.fps_num as u64) as u32
    }
}

pub struct VideoWriter {
    root: PathBuf,
    meta: VideoMeta,
}

impl VideoWriter {
    pub fn push_frame(&mut self, frame: &RgbImage) -> Result<()> {
        if frame.width() != self.meta.width || frame.height() != self.meta.height {
            return Err(Error::ShapeMismatch(format!(
                "frame is {}x{}, video is {}x{}",
                frame.width(),
                frame.height(),
                self.meta.width,
                self.meta.height
            )));
        }
        let path = self.root.join(format!("{:08}.png", self.meta.n_frames));
        write_png(&path, frame)?;
        self.meta.n_frames += 1;
        Ok(())
    }

    /// Copies an already-encoded frame file.
    pub fn push_encoded(&mut self, source: &Path) -> Result<()> {
        let path = self.root.join(format!("{:08}.png", self.meta.n_frames));
        fs::copy(source, &path).map_err(|e| Error::io(source, e))?;
        self.meta.n_frames += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<FrameDirVideo> {
        let header = self.root.join(VIDEO_HEADER);
        let text = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::json(&header, e))?;
        fs::write(&header, text).map_err(|e| Error::io(&header, e))?;
        Ok(FrameDirVideo {
            root: self.root,
            meta: self.meta,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedFrames {
    pub rate: u32,
    pub timestamps: Vec<u32>,
    pub source_frames: Vec<u64>,
}

/// Samples `video` at `rate` frames per second into `out_dir`.
///
/// Sample `k` is the source frame shown at time `k / rate`; only whole
/// seconds are sampled, a trailing partial second is dropped. Stored files are
/// byte copies of the decoded-and-verified source frames.
pub fn extract_frames(video: &FrameDirVideo, rate: u32, out_dir: &Path) -> Result<ExtractedFrames> {
    if rate == 0 {
        return Err(Error::Config("extraction rate must be positive".into()));
    }
    let fps = video.meta.fps();
    let n_samples = video.duration_s() as u64 * rate as u64;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let video_id = video
        .root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut extracted = ExtractedFrames {
        rate,
        timestamps: Vec::with_capacity(n_samples as usize),
        source_frames: Vec::with_capacity(n_samples as usize),
    };
    for k in 0..n_samples {
        let index = fps.frame_at(k, rate);
        let src = video.frame_path(index);
        let bytes = match fs::read(&src) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingTimestamp {
                    video_id,
                    timestamp_s: (k / rate as u64) as u32,
                })
            }
            Err(e) => return Err(Error::io(&src, e)),
        };
        image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| Error::Decode {
            path: src.clone(),
            reason: e.to_string(),
        })?;
        let dst = out_dir.join(format!("{k:06}.png"));
        fs::write(&dst, &bytes).map_err(|e| Error::io(&dst, e))?;
        extracted.timestamps.push(k as u32);
        extracted.source_frames.push(index);
    }
    let index_path = out_dir.join(STORE_INDEX);
    let text = serde_json::to_string(&extracted).map_err(|e| Error::json(&index_path, e))?;
    fs::write(&index_path, text).map_err(|e| Error::io(&index_path, e))?;
    Ok(extracted)
}

/// Per-second frame rasters indexed by `(video_id, timestamp_s)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameStore {
    root: PathBuf,
}

impl FrameStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FrameStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn video_dir(&self, video_id: &str) -> PathBuf {
        self.root.join(video_id)
    }

    pub fn frame_path(&self, video_id: &str, timestamp_s: u32) -> PathBuf {
        self.video_dir(video_id).join(format!("{timestamp_s:06}.png"))
    }

    pub fn load(&self, video_id: &str, timestamp_s: u32) -> Result<RgbImage> {
        let path = self.frame_path(video_id, timestamp_s);
        if !path.exists() {
            return Err(Error::MissingFrames {
                video_id: video_id.to_string(),
                timestamp_s,
            });
        }
        read_png(&path)
    }

    pub fn index(&self, video_id: &str) -> Result<ExtractedFrames> {
        let path = self.video_dir(video_id).join(STORE_INDEX);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map(|img| img.into_rgb8())
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Fast, FilterType::Sub);
    encoder
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(v: u8) -> RgbImage {
        RgbImage::from_pixel(8, 6, image::Rgb([v, v / 2, 255 - v]))
    }

    fn make_video(dir: &Path, fps: Fps, n: u64) -> FrameDirVideo {
        let mut w = FrameDirVideo::create(dir, fps, 8, 6).unwrap();
        for i in 0..n {
            w.push_frame(&solid((i % 256) as u8)).unwrap();
        }
        w.finish().unwrap()
    }

    #[test]
    fn ten_seconds_at_thirty_fps() {
        let tmp = tempfile::tempdir().unwrap();
        let video = make_video(&tmp.path().join("v"), Fps::integer(30), 300);
        let out = extract_frames(&video, 1, &tmp.path().join("store/v")).unwrap();
        assert_eq!(out.timestamps, (0..10).collect::<Vec<_>>());
        assert_eq!(out.source_frames, (0..10).map(|t| t * 30).collect::<Vec<_>>());
        let store = FrameStore::new(tmp.path().join("store"));
        assert_eq!(store.load("v", 9).unwrap(), solid(((9 * 30) % 256) as u8));
        assert_eq!(store.index("v").unwrap(), out);
    }

    #[test]
    fn one_second_video() {
        let tmp = tempfile::tempdir().unwrap();
        let video = make_video(&tmp.path().join("v"), Fps::integer(30), 30);
        let out = extract_frames(&video, 1, &tmp.path().join("out")).unwrap();
        assert_eq!(out.timestamps, vec![0]);
    }

    #[test]
    fn missing_and_corrupt_frames() {
        let tmp = tempfile::tempdir().unwrap();
        let video = make_video(&tmp.path().join("v"), Fps::integer(2), 6);
        fs::remove_file(video.frame_path(4)).unwrap();
        let err = extract_frames(&video, 1, &tmp.path().join("out")).unwrap_err();
        assert!(matches!(err, Error::MissingTimestamp { timestamp_s: 2, .. }));

        fs::write(video.frame_path(4), b"not a png").unwrap();
        let err = extract_frames(&video, 1, &tmp.path().join("out")).unwrap_err();
        assert!(matches!(err, Error::Decode { .. }));
    }

    #[test]
    fn store_reports_missing_frames() {
        let store = FrameStore::new("/nonexistent");
        assert!(matches!(
            store.load("v", 3),
            Err(Error::MissingFrames { timestamp_s: 3, .. })
        ));
    }
}
