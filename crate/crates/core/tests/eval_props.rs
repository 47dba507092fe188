//! Metric invariants against a brute-force counter.

use endoscrub::dataset::ClassLabel;
use endoscrub::eval::{aggregate_folds, class_metrics, confusion, macro_f1, parse_rle, rle, ConfusionMatrix};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = ClassLabel> {
    prop_oneof![Just(ClassLabel::Relevant), Just(ClassLabel::Irrelevant)]
}

fn pairs() -> impl Strategy<Value = Vec<(ClassLabel, ClassLabel)>> {
    prop::collection::vec((label(), label()), 1..300)
}

fn f1_of(pairs: &[(ClassLabel, ClassLabel)], c: ClassLabel) -> f64 {
    let hit = pairs.iter().filter(|(p, t)| *p == c && *t == c).count() as f64;
    let pred = pairs.iter().filter(|(p, _)| *p == c).count() as f64;
    let act = pairs.iter().filter(|(_, t)| *t == c).count() as f64;
    // F1 = 2·hit / (pred + act), zero when both are empty
    if pred + act == 0.0 {
        0.0
    } else {
        200.0 * hit / (pred + act)
    }
}

proptest! {
    #[test]
    fn confusion_counts_partition(v in pairs()) {
        let (p, t): (Vec<_>, Vec<_>) = v.iter().copied().unzip();
        let cm = confusion(&p, &t).unwrap();
        prop_assert_eq!(cm.total() as usize, v.len());
        let tp = v.iter().filter(|(p, t)| p.is_positive() && t.is_positive()).count() as u64;
        prop_assert_eq!(cm.tp, tp);
    }

    #[test]
    fn f1_matches_brute_force(v in pairs()) {
        let (p, t): (Vec<_>, Vec<_>) = v.iter().copied().unzip();
        let cm = confusion(&p, &t).unwrap();
        for c in ClassLabel::ALL {
            let m = class_metrics(&cm, c);
            prop_assert!((m.f1 - f1_of(&v, c)).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&m.precision));
            prop_assert!((0.0..=100.0).contains(&m.recall));
        }
        let mf1 = macro_f1(&cm);
        prop_assert!((mf1 - (f1_of(&v, ClassLabel::Relevant) + f1_of(&v, ClassLabel::Irrelevant)) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn macro_f1_is_symmetric_in_classes(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
        let cm = ConfusionMatrix { tp, fp, fn_, tn };
        prop_assert!((macro_f1(&cm) - macro_f1(&cm.swapped())).abs() < 1e-12);
        // relabelling predictions and truth together transposes fp and fn
        let transposed = ConfusionMatrix { tp, fp: fn_, fn_: fp, tn };
        prop_assert!((macro_f1(&cm) - macro_f1(&transposed)).abs() < 1e-9);
    }

    #[test]
    fn perfect_predictions_score_100(t in prop::collection::vec(label(), 1..200)) {
        let cm = confusion(&t, &t).unwrap();
        let both = t.contains(&ClassLabel::Relevant) && t.contains(&ClassLabel::Irrelevant);
        if both {
            prop_assert!((macro_f1(&cm) - 100.0).abs() < 1e-12);
        }
        prop_assert_eq!(cm.fp + cm.fn_, 0);
    }

    #[test]
    fn aggregation_matches_two_pass(values in prop::collection::vec(0.0f64..100.0, 2..8)) {
        let r = aggregate_folds(&values).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        prop_assert!((r.mean - mean).abs() < 1e-9);
        prop_assert!((r.std - var.sqrt()).abs() < 1e-9);
        prop_assert!(r.std >= 0.0);
    }

    #[test]
    fn rle_round_trips(t in prop::collection::vec(label(), 0..200)) {
        let text = rle(&t);
        prop_assert_eq!(parse_rle(&text).unwrap(), t);
    }
}

#[test]
fn table_cell_format() {
    let r = aggregate_folds(&[96.0, 97.0, 98.0, 99.0, 100.0]).unwrap();
    assert_eq!(r.cell(), "98.00 (±1.58)");
    assert!(aggregate_folds(&[1.0]).is_err());
}

#[test]
fn confusion_rejects_bad_input() {
    assert!(confusion(&[], &[]).is_err());
    assert!(confusion(&[ClassLabel::Relevant], &[]).is_err());
}
