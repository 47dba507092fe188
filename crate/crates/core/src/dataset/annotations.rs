use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{ClassLabel, FrameSample, SegmentAnnotation, VideoRecord};
use crate::error::{Error, Result};

const HEADER: &str = "video_id,start_s,end_s,label";

/// Validated segments grouped by video id, each list sorted by `start_s`.
pub type Annotations = BTreeMap<String, Vec<SegmentAnnotation>>;

pub fn parse_annotations(path: &Path, durations: &BTreeMap<String, u32>) -> Result<Annotations> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations_str(&text, durations)
}

/// Parses annotation CSV text. Every video in `durations` must be tiled by
/// its segments; rows naming videos outside `durations` are rejected.
pub fn parse_annotations_str(text: &str, durations: &BTreeMap<String, u32>) -> Result<Annotations> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim().trim_start_matches('\u{feff}') == HEADER => {}
        Some((_, header)) => {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("expected header `{HEADER}`, found `{}`", header.trim()),
            })
        }
        None => {
            return Err(Error::MalformedRow {
                line: 1,
                reason: "empty file".into(),
            })
        }
    }

    let mut grouped: Annotations = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let video_id = fields[0];
        if video_id.is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty video_id".into(),
            });
        }
        let start_s = parse_seconds(fields[1], line)?;
        let end_s = parse_seconds(fields[2], line)?;
        let label = fields[3]
            .parse::<ClassLabel>()
            .map_err(|reason| Error::MalformedRow { line, reason })?;
        if start_s >= end_s {
            return Err(Error::MalformedRow {
                line,
                reason: format!("start {start_s} is not before end {end_s}"),
            });
        }
        if !durations.contains_key(video_id) {
            return Err(Error::UnknownVideo(video_id.to_string()));
        }
        grouped
            .entry(video_id.to_string())
            .or_default()
            .push(SegmentAnnotation {
                video_id: video_id.to_string(),
                start_s,
                end_s,
                label,
            });
    }

    for (video_id, &duration_s) in durations {
        let segments = grouped.entry(video_id.clone()).or_default();
        segments.sort_by_key(|s| (s.start_s, s.end_s));
        validate_segments(video_id, duration_s, segments)?;
    }
    Ok(grouped)
}

/// Whole seconds; fractional values are rounded down.
fn parse_seconds(field: &str, line: usize) -> Result<u32> {
    if let Ok(v) = field.parse::<u32>() {
        return Ok(v);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 && v < u32::MAX as f64 => Ok(v.floor() as u32),
        _ => Err(Error::MalformedRow {
            line,
            reason: format!("`{field}` is not a non-negative number of seconds"),
        }),
    }
}

/// Checks that sorted `segments` tile `[0, duration_s)` exactly.
pub fn validate_segments(video_id: &str, duration_s: u32, segments: &[SegmentAnnotation]) -> Result<()> {
    let mut cursor = 0u32;
    for seg in segments {
        if seg.end_s > duration_s {
            return Err(Error::Bounds {
                video_id: video_id.to_string(),
                end_s: seg.end_s,
                duration_s,
            });
        }
        if seg.start_s < cursor {
            return Err(Error::Overlap {
                video_id: video_id.to_string(),
                at: seg.start_s,
            });
        }
        if seg.start_s > cursor {
            return Err(Error::Gap {
                video_id: video_id.to_string(),
                at: cursor,
            });
        }
        cursor = seg.end_s;
    }
    if cursor < duration_s {
        return Err(Error::Gap {
            video_id: video_id.to_string(),
            at: cursor,
        });
    }
    Ok(())
}

/// One labeled sample per integer second of the video.
pub fn derive_frame_labels(video: &VideoRecord, segments: &[SegmentAnnotation]) -> Result<Vec<FrameSample>> {
    let mut labels: Vec<Option<ClassLabel>> = vec![None; video.duration_s as usize];
    for seg in segments.iter().filter(|s| s.video_id == video.video_id) {
        if seg.end_s > video.duration_s {
            return Err(Error::Bounds {
                video_id: video.video_id.clone(),
                end_s: seg.end_s,
                duration_s: video.duration_s,
            });
        }
        for t in seg.start_s..seg.end_s {
            let slot = &mut labels[t as usize];
            if slot.is_some() {
                return Err(Error::Overlap {
                    video_id: video.video_id.clone(),
                    at: t,
                });
            }
            *slot = Some(seg.label);
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(t, label)| match label {
            Some(label) => Ok(FrameSample {
                video_id: video.video_id.clone(),
                timestamp_s: t as u32,
                label: Some(label),
            }),
            None => Err(Error::Gap {
                video_id: video.video_id.clone(),
                at: t as u32,
            }),
        })
        .collect()
}

pub fn write_annotations(path: &Path, annotations: &Annotations) -> Result<()> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for seg in annotations.values().flatten() {
        let _ = writeln!(out, "{},{},{},{}", seg.video_id, seg.start_s, seg.end_s, seg.label);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
