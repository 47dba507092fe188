use serde::{Deserialize, Serialize};

use super::{ClassLabel, FrameSample, SegmentAnnotation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub relevant_frames: usize,
    pub irrelevant_frames: usize,
    pub relevant_segments: usize,
    pub irrelevant_segments: usize,
    /// Irrelevant:relevant frame ratio rounded to 4 decimals; absent when
    /// there are no relevant frames.
    pub ratio: Option<f64>,
}

/// `irrelevant / relevant` rounded to four decimals.
pub fn irrelevant_ratio(irrelevant: usize, relevant: usize) -> Option<f64> {
    if relevant == 0 {
        return None;
    }
    Some((irrelevant as f64 / relevant as f64 * 1e4).round() / 1e4)
}

pub fn dataset_stats(frames: &[FrameSample], segments: &[SegmentAnnotation]) -> StatsReport {
    let count_frames = |label| frames.iter().filter(|f| f.label == Some(label)).count();
    let count_segments = |label| segments.iter().filter(|s| s.label == label).count();
    let relevant_frames = count_frames(ClassLabel::Relevant);
    let irrelevant_frames = count_frames(ClassLabel::Irrelevant);
    StatsReport {
        relevant_frames,
        irrelevant_frames,
        relevant_segments: count_segments(ClassLabel::Relevant),
        irrelevant_segments: count_segments(ClassLabel::Irrelevant),
        ratio: irrelevant_ratio(irrelevant_frames, relevant_frames),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(relevant: usize, irrelevant: usize) -> Vec<FrameSample> {
        let mk = |label, i| FrameSample {
            video_id: "v".into(),
            timestamp_s: i as u32,
            label: Some(label),
        };
        (0..relevant)
            .map(|i| mk(ClassLabel::Relevant, i))
            .chain((0..irrelevant).map(|i| mk(ClassLabel::Irrelevant, relevant + i)))
            .collect()
    }

    #[test]
    fn fold_one_train_ratio() {
        let report = dataset_stats(&frames(31788, 2726), &[]);
        assert_eq!(report.ratio, Some(0.0858));
        assert_eq!(report.relevant_frames, 31788);
    }

    #[test]
    fn no_irrelevant_frames() {
        let segs = vec![SegmentAnnotation {
            video_id: "v".into(),
            start_s: 0,
            end_s: 5,
            label: ClassLabel::Relevant,
        }];
        let report = dataset_stats(&frames(5, 0), &segs);
        assert_eq!(report.ratio, Some(0.0));
        assert_eq!(report.irrelevant_segments, 0);
        assert_eq!(report.relevant_segments, 1);
    }

    #[test]
    fn empty_input() {
        let report = dataset_stats(&[], &[]);
        assert_eq!(report.relevant_frames + report.irrelevant_frames, 0);
        assert_eq!(report.ratio, None);
    }
}
