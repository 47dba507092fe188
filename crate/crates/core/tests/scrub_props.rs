//! Edit-list invariants over random segmentations.

use endoscrub::dataset::{ClassLabel, SegmentAnnotation};
use endoscrub::scrub::{make_edit_list, oracle_predictions, segmentize, smooth, FramePrediction};
use proptest::prelude::*;

/// Alternating runs starting with a random label.
fn segments() -> impl Strategy<Value = Vec<SegmentAnnotation>> {
    (any::<bool>(), prop::collection::vec(1u32..40, 1..10)).prop_map(|(first_irr, lens)| {
        let mut at = 0;
        lens.iter()
            .enumerate()
            .map(|(i, &len)| {
                let irr = (i % 2 == 0) == first_irr;
                let s = SegmentAnnotation {
                    video_id: "v".into(),
                    start_s: at,
                    end_s: at + len,
                    label: if irr {
                        ClassLabel::Irrelevant
                    } else {
                        ClassLabel::Relevant
                    },
                };
                at += len;
                s
            })
            .collect()
    })
}

fn irrelevant_seconds(segs: &[SegmentAnnotation]) -> u32 {
    segs.iter()
        .filter(|s| s.label == ClassLabel::Irrelevant)
        .map(|s| s.end_s - s.start_s)
        .sum()
}

proptest! {
    #[test]
    fn edit_list_tiles_the_video(segs in segments(), margin in 0i64..20) {
        let edl = make_edit_list(&segs, margin).unwrap();
        edl.validate().unwrap();
        prop_assert_eq!(edl.removed_seconds() + edl.kept_seconds(), segs.last().unwrap().end_s);
    }

    #[test]
    fn zero_margin_removes_exactly_the_irrelevant_seconds(segs in segments()) {
        let edl = make_edit_list(&segs, 0).unwrap();
        prop_assert_eq!(edl.removed_seconds(), irrelevant_seconds(&segs));
        for s in &segs {
            for t in s.start_s..s.end_s {
                prop_assert_eq!(edl.is_removed(t), s.label == ClassLabel::Irrelevant);
            }
        }
    }

    #[test]
    fn larger_margins_remove_supersets(segs in segments(), m in 0i64..10, extra in 1i64..10) {
        let small = make_edit_list(&segs, m).unwrap();
        let large = make_edit_list(&segs, m + extra).unwrap();
        let end = segs.last().unwrap().end_s;
        for t in 0..end {
            prop_assert!(!small.is_removed(t) || large.is_removed(t));
        }
        prop_assert!(large.removed_seconds() >= small.removed_seconds());
    }

    #[test]
    fn segmentize_inverts_oracle_predictions(segs in segments()) {
        let preds = oracle_predictions(&segs);
        prop_assert_eq!(segmentize("v", &preds).unwrap(), segs);
    }

    #[test]
    fn smoothing_keeps_length_and_window_one_is_identity(segs in segments(), half in 0usize..4) {
        let preds = oracle_predictions(&segs);
        let out = smooth(&preds, 2 * half + 1).unwrap();
        prop_assert_eq!(out.len(), preds.len());
        prop_assert_eq!(smooth(&preds, 1).unwrap(), preds);
    }
}

#[test]
fn rejects_negative_margin_and_even_windows() {
    let segs = vec![SegmentAnnotation {
        video_id: "v".into(),
        start_s: 0,
        end_s: 5,
        label: ClassLabel::Irrelevant,
    }];
    assert!(make_edit_list(&segs, -1).is_err());
    let preds: Vec<FramePrediction> = oracle_predictions(&segs);
    assert!(smooth(&preds, 4).is_err());
}

#[test]
fn margin_is_clipped_to_the_video() {
    let segs = vec![
        SegmentAnnotation {
            video_id: "v".into(),
            start_s: 0,
            end_s: 3,
            label: ClassLabel::Irrelevant,
        },
        SegmentAnnotation {
            video_id: "v".into(),
            start_s: 3,
            end_s: 10,
            label: ClassLabel::Relevant,
        },
    ];
    let edl = make_edit_list(&segs, 4).unwrap();
    assert_eq!(edl.remove, vec![[0, 7]]);
    assert_eq!(edl.keep, vec![[7, 10]]);
}
