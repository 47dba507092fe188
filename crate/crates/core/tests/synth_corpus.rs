//! Generated corpora: determinism, loadability and class separability.

use std::path::Path;

use endoscrub::dataset::{dataset_stats, validate_segments, ClassLabel, Corpus, FrameStore};
use endoscrub::eval::{confusion, macro_f1};
use endoscrub::rng::sha256_hex;
use endoscrub::synth::{generate_corpus, SynthConfig};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        n_videos: 10,
        duration_s: [20, 40],
        height: 72,
        width: 128,
        seed,
        ..SynthConfig::default()
    }
}

fn tree_hash(root: &Path) -> String {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut acc = Vec::new();
    for f in files {
        // manifest paths embed the output directory
        if f.file_name().is_some_and(|n| n == "manifest.json") {
            continue;
        }
        acc.extend(f.strip_prefix(root).unwrap().to_string_lossy().bytes());
        acc.extend(std::fs::read(&f).unwrap());
    }
    sha256_hex(&acc)
}

#[test]
fn same_seed_gives_identical_corpus() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ca = generate_corpus(&small(4), a.path()).unwrap();
    let cb = generate_corpus(&small(4), b.path()).unwrap();
    assert_eq!(ca.annotations, cb.annotations);
    assert_eq!(tree_hash(a.path()), tree_hash(b.path()));

    let c = tempfile::tempdir().unwrap();
    let cc = generate_corpus(&small(5), c.path()).unwrap();
    assert_ne!(ca.annotations, cc.annotations);
}

#[test]
fn corpus_loads_and_annotations_validate() {
    let dir = tempfile::tempdir().unwrap();
    let c = generate_corpus(&small(6), dir.path()).unwrap();
    let corpus = Corpus::load(&c.manifest, &c.annotations_csv, &c.frame_store).unwrap();
    assert_eq!(corpus.videos.len(), 10);
    let mut all_segments = Vec::new();
    for v in &corpus.videos {
        let segs = corpus.segments(&v.video_id);
        validate_segments(&v.video_id, v.duration_s, segs).unwrap();
        assert!((20..=40).contains(&v.duration_s));
        for t in 0..v.duration_s {
            assert!(corpus.store.frame_path(&v.video_id, t).exists());
        }
        all_segments.extend_from_slice(segs);
    }
    let frames = corpus.labeled_frames(&corpus.video_ids()).unwrap();
    let ratio = dataset_stats(&frames, &all_segments).ratio.unwrap();
    assert!((0.04..=0.12).contains(&ratio), "ratio {ratio}");
}

#[test]
fn color_threshold_separates_classes() {
    let dir = tempfile::tempdir().unwrap();
    let c = generate_corpus(&small(7), dir.path()).unwrap();
    let store = FrameStore::new(&c.frame_store);
    let (mut preds, mut truth) = (Vec::new(), Vec::new());
    for (id, segs) in &c.annotations {
        for s in segs {
            for t in s.start_s..s.end_s {
                let img = store.load(id, t).unwrap();
                let mut sum = [0f64; 3];
                for p in img.pixels() {
                    for k in 0..3 {
                        sum[k] += p[k] as f64;
                    }
                }
                let red_dominant = sum[0] > 1.3 * sum[2];
                preds.push(if red_dominant {
                    ClassLabel::Relevant
                } else {
                    ClassLabel::Irrelevant
                });
                truth.push(s.label);
            }
        }
    }
    let mf1 = macro_f1(&confusion(&preds, &truth).unwrap());
    assert!(mf1 >= 85.0, "mF1 {mf1}");
}

#[test]
fn distractors_cover_about_a_tenth_of_relevant_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let c = generate_corpus(&small(8), dir.path()).unwrap();
    let mut relevant = 0usize;
    let mut hit = 0usize;
    for (id, segs) in &c.annotations {
        let marked = &c.distractors[id];
        for s in segs.iter().filter(|s| s.label == ClassLabel::Relevant) {
            relevant += s.len() as usize;
            hit += marked.iter().filter(|&&t| s.start_s <= t && t < s.end_s).count();
        }
        for t in marked {
            let seg = segs.iter().find(|s| s.start_s <= *t && *t < s.end_s).unwrap();
            assert_eq!(seg.label, ClassLabel::Relevant);
        }
    }
    let share = hit as f64 / relevant as f64;
    assert!((0.05..=0.15).contains(&share), "share {share}");
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        duration_s: [30, 10],
        ..small(1)
    };
    assert!(generate_corpus(&cfg, dir.path()).is_err());
}
