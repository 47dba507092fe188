//! Whole-video inference, segmentation into runs, edit lists and the
//! scrubbed output video.
//!
//! Edits are made in whole seconds: a second is cut when its 1 fps
//! representative frame is irrelevant, and every source frame of that second
//! goes with it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, FrameDirVideo, FrameSample, FrameStore, SegmentAnnotation};
use crate::error::{Error, Result};
use crate::eval::predict;
use crate::model::Model;
use crate::train::{EvalSet, ImagePipeline, EVAL_CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub timestamp_s: u32,
    pub label: ClassLabel,
    /// Softmax probability of the predicted class.
    pub confidence: f64,
}

/// Runs the classifier on every second `0..duration_s` of a video.
pub fn classify_video(
    model: &Model,
    store: &FrameStore,
    video_id: &str,
    duration_s: u32,
    pipeline: &ImagePipeline,
) -> Result<Vec<FramePrediction>> {
    for t in 0..duration_s {
        if !store.frame_path(video_id, t).is_file() {
            return Err(Error::MissingFrames {
                video_id: video_id.to_string(),
                timestamp_s: t,
            });
        }
    }
    let mut out = Vec::with_capacity(duration_s as usize);
    let seconds: Vec<u32> = (0..duration_s).collect();
    for chunk in seconds.chunks(EVAL_CHUNK) {
        let frames: Vec<FrameSample> = chunk
            .iter()
            .map(|&t| FrameSample {
                video_id: video_id.to_string(),
                timestamp_s: t,
                label: None,
            })
            .collect();
        let set = EvalSet::images(store, &frames, pipeline)?;
        for (&t, (label, confidence)) in chunk.iter().zip(predict(model, &set)?) {
            out.push(FramePrediction {
                timestamp_s: t,
                label,
                confidence,
            });
        }
    }
    Ok(out)
}

/// Predictions that copy the annotations, at full confidence.
pub fn oracle_predictions(segments: &[SegmentAnnotation]) -> Vec<FramePrediction> {
    let mut out = Vec::new();
    for s in segments {
        for t in s.start_s..s.end_s {
            out.push(FramePrediction {
                timestamp_s: t,
                label: s.label,
                confidence: 1.0,
            });
        }
    }
    out.sort_by_key(|p| p.timestamp_s);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    #[default]
    None,
    Median(usize),
}

/// Majority label in a centered window (edges clamped). A second whose label
/// flips takes the vote share as its confidence.
pub fn smooth(preds: &[FramePrediction], window: usize) -> Result<Vec<FramePrediction>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::EvenWindow(window));
    }
    let n = preds.len() as isize;
    let half = (window / 2) as isize;
    Ok(preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let irr = (-half..=half)
                .filter(|d| preds[(i as isize + d).clamp(0, n - 1) as usize].label == ClassLabel::Irrelevant)
                .count();
            let label = if irr * 2 > window {
                ClassLabel::Irrelevant
            } else {
                ClassLabel::Relevant
            };
            let confidence = if label == p.label {
                p.confidence
            } else {
                let votes = if label == ClassLabel::Irrelevant {
                    irr
                } else {
                    window - irr
                };
                votes as f64 / window as f64
            };
            FramePrediction {
                timestamp_s: p.timestamp_s,
                label,
                confidence,
            }
        })
        .collect())
}

/// Maximal runs of equal labels. Timestamps must be `0, 1, 2, ...`.
pub fn segmentize(video_id: &str, preds: &[FramePrediction]) -> Result<Vec<SegmentAnnotation>> {
    let mut out: Vec<SegmentAnnotation> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        if p.timestamp_s != i as u32 {
            return Err(Error::NonContiguous {
                expected: i as u32,
                found: p.timestamp_s,
            });
        }
        match out.last_mut() {
            Some(last) if last.label == p.label => last.end_s += 1,
            _ => out.push(SegmentAnnotation {
                video_id: video_id.to_string(),
                start_s: i as u32,
                end_s: i as u32 + 1,
                label: p.label,
            }),
        }
    }
    Ok(out)
}

pub type Interval = [u32; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditList {
    pub video_id: String,
    pub duration_s: u32,
    pub margin_s: u32,
    pub smoothing: Smoothing,
    /// Sorted, disjoint `[start, end)` spans to cut.
    pub remove: Vec<Interval>,
    pub keep: Vec<Interval>,
    /// Config hash of the model that produced the predictions.
    pub model: String,
}

fn complement(remove: &[Interval], duration: u32) -> Vec<Interval> {
    let mut keep = Vec::new();
    let mut at = 0;
    for r in remove {
        if r[0] > at {
            keep.push([at, r[0]]);
        }
        at = r[1];
    }
    if at < duration {
        keep.push([at, duration]);
    }
    keep
}

/// Irrelevant runs dilated by `margin_s` on both sides, merged and clipped
/// to the video; `keep` is the complement.
pub fn make_edit_list(segments: &[SegmentAnnotation], margin_s: i64) -> Result<EditList> {
    if margin_s < 0 {
        return Err(Error::NegativeMargin(margin_s));
    }
    let mut at = 0;
    for s in segments {
        if s.start_s != at {
            return Err(Error::NonContiguous {
                expected: at,
                found: s.start_s,
            });
        }
        at = s.end_s;
    }
    let duration = at;
    let m = margin_s.min(u32::MAX as i64) as u32;
    let mut remove: Vec<Interval> = Vec::new();
    for s in segments.iter().filter(|s| s.label == ClassLabel::Irrelevant) {
        let span = [s.start_s.saturating_sub(m), s.end_s.saturating_add(m).min(duration)];
        match remove.last_mut() {
            Some(last) if span[0] <= last[1] => last[1] = last[1].max(span[1]),
            _ => remove.push(span),
        }
    }
    Ok(EditList {
        video_id: segments.first().map(|s| s.video_id.clone()).unwrap_or_default(),
        duration_s: duration,
        margin_s: m,
        smoothing: Smoothing::None,
        keep: complement(&remove, duration),
        remove,
        model: String::new(),
    })
}

impl EditList {
    /// Checks that `remove` and `keep` are sorted, disjoint and together
    /// cover `[0, duration_s)` exactly.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::IntervalMismatch(m));
        let mut all: Vec<(Interval, bool)> = self
            .remove
            .iter()
            .map(|&i| (i, true))
            .chain(self.keep.iter().map(|&i| (i, false)))
            .collect();
        for (i, _) in &all {
            if i[0] >= i[1] {
                return bad(format!("empty or reversed interval {i:?}"));
            }
        }
        for list in [&self.remove, &self.keep] {
            if list.windows(2).any(|w| w[1][0] < w[0][1]) {
                return bad("intervals are unsorted or overlapping".into());
            }
        }
        all.sort_by_key(|(i, _)| i[0]);
        let mut at = 0;
        for (i, _) in &all {
            if i[0] != at {
                return bad(format!("intervals do not tile the video at second {at}"));
            }
            at = i[1];
        }
        if at != self.duration_s {
            return bad(format!("intervals end at {at}, video lasts {}", self.duration_s));
        }
        Ok(())
    }

    pub fn removed_seconds(&self) -> u32 {
        self.remove.iter().map(|i| i[1] - i[0]).sum()
    }

    pub fn kept_seconds(&self) -> u32 {
        self.keep.iter().map(|i| i[1] - i[0]).sum()
    }

    pub fn is_removed(&self, t: u32) -> bool {
        self.remove.iter().any(|i| i[0] <= t && t < i[1])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanMapping {
    pub old: Interval,
    pub new_start_s: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrubAudit {
    pub video_id: String,
    pub input_duration_s: u32,
    pub output_duration_s: u32,
    pub input_frames: u64,
    pub output_frames: u64,
    pub removed: Vec<Interval>,
    /// Where each kept span lands in the output.
    pub mapping: Vec<SpanMapping>,
}

impl ScrubAudit {
    /// Output second of input second `t`, if it was kept.
    pub fn new_time(&self, t: u32) -> Option<u32> {
        self.mapping
            .iter()
            .find(|m| m.old[0] <= t && t < m.old[1])
            .map(|m| m.new_start_s + (t - m.old[0]))
    }
}

/// Writes the kept seconds of `video`, in order, as a new frame-directory
/// video at `out_video`, and the audit record at `audit_path`. Source frames
/// past the last whole second are dropped.
pub fn apply_edit_list(
    video: &FrameDirVideo,
    edl: &EditList,
    out_video: &Path,
    audit_path: &Path,
) -> Result<ScrubAudit> {
    if edl.duration_s != video.duration_s() {
        return Err(Error::IntervalMismatch(format!(
            "edit list covers {} s, video lasts {} s",
            edl.duration_s,
            video.duration_s()
        )));
    }
    edl.validate()?;
    if out_video.exists() {
        std::fs::remove_dir_all(out_video).map_err(|e| Error::io(out_video, e))?;
    }
    let mut writer = FrameDirVideo::create(out_video, video.meta.fps(), video.meta.width, video.meta.height)?;
    let mut written = 0u64;
    for index in 0..video.meta.n_frames {
        let t = video.second_of(index);
        if t >= edl.duration_s || edl.is_removed(t) {
            continue;
        }
        writer.push_encoded(&video.frame_path(index))?;
        written += 1;
    }
    writer.finish()?;
    let mut mapping = Vec::new();
    let mut at = 0;
    for k in &edl.keep {
        mapping.push(SpanMapping {
            old: *k,
            new_start_s: at,
        });
        at += k[1] - k[0];
    }
    let audit = ScrubAudit {
        video_id: edl.video_id.clone(),
        input_duration_s: edl.duration_s,
        output_duration_s: edl.kept_seconds(),
        input_frames: video.meta.n_frames,
        output_frames: written,
        removed: edl.remove.clone(),
        mapping,
    };
    if let Some(dir) = audit_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(&audit).map_err(|e| Error::json(audit_path, e))?;
    std::fs::write(audit_path, text + "\n").map_err(|e| Error::io(audit_path, e))?;
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::*;

    fn preds(labels: &[ClassLabel]) -> Vec<FramePrediction> {
        labels
            .iter()
            .enumerate()
            .map(|(t, &label)| FramePrediction {
                timestamp_s: t as u32,
                label,
                confidence: 0.9,
            })
            .collect()
    }

    fn labels(p: &[FramePrediction]) -> Vec<ClassLabel> {
        p.iter().map(|p| p.label).collect()
    }

    fn seg(s: u32, e: u32, label: ClassLabel) -> SegmentAnnotation {
        SegmentAnnotation {
            video_id: "v".into(),
            start_s: s,
            end_s: e,
            label,
        }
    }

    #[test]
    fn smoothing() {
        let p = preds(&[Relevant, Irrelevant, Relevant]);
        assert_eq!(smooth(&p, 1).unwrap(), p);
        assert_eq!(labels(&smooth(&p, 3).unwrap()), vec![Relevant; 3]);
        let c = preds(&[Irrelevant; 5]);
        assert_eq!(smooth(&c, 5).unwrap(), c);
        assert!(matches!(smooth(&p, 4), Err(Error::EvenWindow(4))));
        assert!(matches!(smooth(&p, 0), Err(Error::EvenWindow(0))));
    }

    #[test]
    fn segmentize_by_hand() {
        let s = segmentize("v", &preds(&[Relevant, Irrelevant, Irrelevant, Relevant])).unwrap();
        assert_eq!(s, vec![seg(0, 1, Relevant), seg(1, 3, Irrelevant), seg(3, 4, Relevant)]);
        assert_eq!(
            segmentize("v", &preds(&[Relevant; 9])).unwrap(),
            vec![seg(0, 9, Relevant)]
        );
        let mut gap = preds(&[Relevant; 3]);
        gap[2].timestamp_s = 5;
        assert!(matches!(
            segmentize("v", &gap),
            Err(Error::NonContiguous { expected: 2, found: 5 })
        ));
    }

    #[test]
    fn edit_list_by_hand() {
        let none = make_edit_list(&[seg(0, 10, Relevant)], 2).unwrap();
        assert!(none.remove.is_empty());
        assert_eq!(none.keep, vec![[0, 10]]);

        let segs = [
            seg(0, 1, Relevant),
            seg(1, 3, Irrelevant),
            seg(3, 4, Relevant),
            seg(4, 6, Irrelevant),
            seg(6, 10, Relevant),
        ];
        let e = make_edit_list(&segs, 1).unwrap();
        assert_eq!(e.remove, vec![[0, 7]]);
        assert_eq!(e.keep, vec![[7, 10]]);
        e.validate().unwrap();
        let exact = make_edit_list(&segs, 0).unwrap();
        assert_eq!(exact.remove, vec![[1, 3], [4, 6]]);
        assert!(matches!(make_edit_list(&segs, -1), Err(Error::NegativeMargin(-1))));
    }

    #[test]
    fn validate_rejects_bad_tilings() {
        let mut e = make_edit_list(&[seg(0, 4, Relevant), seg(4, 6, Irrelevant)], 0).unwrap();
        e.keep = vec![[0, 3]];
        assert!(matches!(e.validate(), Err(Error::IntervalMismatch(_))));
    }

    #[test]
    fn edit_list_json_shape() {
        let mut e = make_edit_list(&[seg(0, 4, Relevant), seg(4, 6, Irrelevant)], 0).unwrap();
        e.smoothing = Smoothing::Median(5);
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["remove"], serde_json::json!([[4, 6]]));
        assert_eq!(v["smoothing"], serde_json::json!({"median": 5}));
        for key in ["video_id", "duration_s", "margin_s", "keep", "model"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
