//! Confusion-matrix metrics, fold aggregation, prediction timelines and
//! error-analysis export. Metrics are on the percent scale; the positive
//! class is `Irrelevant`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, FrameStore};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::train::{eval_logits, EvalSet, FrameKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Same counts with `Relevant` taken as the positive class.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        100.0 * (self.tp + self.tn) as f64 / self.total() as f64
    }
}

pub fn confusion(preds: &[ClassLabel], truth: &[ClassLabel]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::LengthMismatch {
            preds: preds.len(),
            truth: truth.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in preds.iter().zip(truth) {
        match (p.is_positive(), t.is_positive()) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
    /// Set when a zero denominator forced one of the values to 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn class_metrics(cm: &ConfusionMatrix, cls: ClassLabel) -> ClassMetrics {
    let cm = if cls.is_positive() { *cm } else { cm.swapped() };
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let mut degenerate = precision.is_none() || recall.is_none();
    let (p, r) = (precision.unwrap_or(0.0), recall.unwrap_or(0.0));
    let f1 = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        degenerate = true;
        0.0
    };
    ClassMetrics {
        precision: p,
        recall: r,
        f1,
        degenerate,
    }
}

/// Arithmetic mean of the two per-class F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    (class_metrics(cm, ClassLabel::Relevant).f1 + class_metrics(cm, ClassLabel::Irrelevant).f1) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1).
    pub std: f64,
    pub n_folds: usize,
}

impl FoldReport {
    /// Table cell text, e.g. `98.00 (±1.58)`.
    pub fn cell(&self) -> String {
        format!("{:.2} (±{:.2})", self.mean, self.std)
    }
}

pub fn aggregate_folds(values: &[f64]) -> Result<FoldReport> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewFolds(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(FoldReport {
        values: values.to_vec(),
        mean,
        std: (ss / (n - 1) as f64).sqrt(),
        n_folds: n,
    })
}

/// Per-second predictions against the truth for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTimeline {
    pub video_id: String,
    pub predicted: Vec<ClassLabel>,
    pub confidence: Vec<f64>,
    pub truth: Vec<ClassLabel>,
}

impl PredictionTimeline {
    pub fn new(
        video_id: impl Into<String>,
        predicted: Vec<ClassLabel>,
        confidence: Vec<f64>,
        truth: Vec<ClassLabel>,
    ) -> Result<Self> {
        if predicted.len() != truth.len() || confidence.len() != truth.len() {
            return Err(Error::LengthMismatch {
                preds: predicted.len(),
                truth: truth.len(),
            });
        }
        Ok(PredictionTimeline {
            video_id: video_id.into(),
            predicted,
            confidence,
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }
}

/// Run-length encoding such as `rel×12 irr×3 rel×40`.
pub fn rle(labels: &[ClassLabel]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < labels.len() {
        let mut j = i;
        while j < labels.len() && labels[j] == labels[i] {
            j += 1;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        let _ = write!(out, "{}×{}", labels[i].short(), j - i);
        i = j;
    }
    out
}

pub fn parse_rle(text: &str) -> Result<Vec<ClassLabel>> {
    let mut out = Vec::new();
    for run in text.split_whitespace() {
        let (label, count) = run
            .split_once('×')
            .ok_or_else(|| Error::Config(format!("bad run `{run}`")))?;
        let label: ClassLabel = label.parse().map_err(Error::Config)?;
        let count: usize = count.parse().map_err(|_| Error::Config(format!("bad run `{run}`")))?;
        out.extend(std::iter::repeat_n(label, count));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimelineStyle {
    pub pixels_per_second: u32,
    pub row_height: u32,
    pub gap: u32,
}

impl Default for TimelineStyle {
    fn default() -> Self {
        TimelineStyle {
            pixels_per_second: 4,
            row_height: 24,
            gap: 4,
        }
    }
}

const RELEVANT_TONE: Rgb<u8> = Rgb([173, 216, 230]);
const IRRELEVANT_TONE: Rgb<u8> = Rgb([25, 25, 112]);
const GAP_TONE: Rgb<u8> = Rgb([255, 255, 255]);

/// Two stacked bars (prediction on top, truth below); width is
/// `duration * pixels_per_second`.
pub fn timeline_image(tl: &PredictionTimeline, style: &TimelineStyle) -> RgbImage {
    let w = (tl.len() as u32 * style.pixels_per_second).max(1);
    let h = 2 * style.row_height + style.gap;
    RgbImage::from_fn(w, h, |x, y| {
        let t = (x / style.pixels_per_second.max(1)) as usize;
        let row = if y < style.row_height {
            &tl.predicted
        } else if y < style.row_height + style.gap {
            return GAP_TONE;
        } else {
            &tl.truth
        };
        match row.get(t) {
            Some(ClassLabel::Relevant) => RELEVANT_TONE,
            Some(ClassLabel::Irrelevant) => IRRELEVANT_TONE,
            None => GAP_TONE,
        }
    })
}

/// Writes `<stem>.png` and `<stem>.txt` (run-length encodings).
pub fn render_timeline(tl: &PredictionTimeline, stem: &Path, style: &TimelineStyle) -> Result<(PathBuf, PathBuf)> {
    if let Some(dir) = stem.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let png = stem.with_extension("png");
    crate::dataset::write_png(&png, &timeline_image(tl, style))?;
    let txt = stem.with_extension("txt");
    let text = format!(
        "video_id: {}\nprediction: {}\ntruth: {}\n",
        tl.video_id,
        rle(&tl.predicted),
        rle(&tl.truth)
    );
    std::fs::write(&txt, text).map_err(|e| Error::io(&txt, e))?;
    Ok((png, txt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub video_id: String,
    pub t: u32,
    pub truth: ClassLabel,
    pub pred: ClassLabel,
    pub confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

/// The `k` misclassified seconds with the highest confidence, most confident
/// first (ties broken by time).
pub fn top_errors(tl: &PredictionTimeline, k: usize) -> Vec<ErrorEntry> {
    let mut errs: Vec<ErrorEntry> = (0..tl.len())
        .filter(|&t| tl.predicted[t] != tl.truth[t])
        .map(|t| ErrorEntry {
            video_id: tl.video_id.clone(),
            t: t as u32,
            truth: tl.truth[t],
            pred: tl.predicted[t],
            confidence: tl.confidence[t],
            image: None,
        })
        .collect();
    errs.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.t.cmp(&b.t)));
    errs.truncate(k);
    errs
}

/// Copies the top-`k` error frames of every timeline into `out_dir` and
/// writes `errors.json`; returns the index entries.
pub fn export_errors(
    timelines: &[PredictionTimeline],
    store: &FrameStore,
    k: usize,
    out_dir: &Path,
) -> Result<Vec<ErrorEntry>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut all: Vec<ErrorEntry> = timelines.iter().flat_map(|tl| top_errors(tl, k)).collect();
    all.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| (&a.video_id, a.t).cmp(&(&b.video_id, b.t)))
    });
    all.truncate(k);
    for e in &mut all {
        let name = format!("{}_{:06}.png", e.video_id, e.t);
        let src = store.frame_path(&e.video_id, e.t);
        let dst = out_dir.join(&name);
        std::fs::copy(&src, &dst).map_err(|err| Error::io(&src, err))?;
        e.image = Some(name);
    }
    let index = out_dir.join("errors.json");
    let text = serde_json::to_string_pretty(&all).map_err(|e| Error::json(&index, e))?;
    std::fs::write(&index, text + "\n").map_err(|e| Error::io(&index, e))?;
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub relevant: ClassMetrics,
    pub irrelevant: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fold_id: u32,
    pub split: String,
    #[serde(rename = "mF1")]
    pub mf1: f64,
    pub per_class: PerClass,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(fold_id: u32, split: &str, cm: ConfusionMatrix) -> Self {
        MetricsReport {
            fold_id,
            split: split.to_string(),
            mf1: macro_f1(&cm),
            per_class: PerClass {
                relevant: class_metrics(&cm, ClassLabel::Relevant),
                irrelevant: class_metrics(&cm, ClassLabel::Irrelevant),
            },
            confusion: cm,
        }
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

/// Argmax label and its softmax probability for each item.
pub fn predict(model: &Model, set: &EvalSet) -> Result<Vec<(ClassLabel, f64)>> {
    if model.n_out() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "expected a binary classifier, got {} outputs",
            model.n_out()
        )));
    }
    let logits = eval_logits(model, set)?;
    Ok(logits
        .chunks_exact(2)
        .map(|z| {
            let label = if z[1] > z[0] {
                ClassLabel::Irrelevant
            } else {
                ClassLabel::Relevant
            };
            // softmax of the larger logit
            let conf = 1.0 / (1.0 + (-(z[0] - z[1]).abs()).exp());
            (label, conf)
        })
        .collect())
}

/// Groups per-frame predictions into one timeline per video. Every video's
/// seconds must run contiguously from 0.
pub fn build_timelines(
    keys: &[FrameKey],
    preds: &[(ClassLabel, f64)],
    truth: &[ClassLabel],
) -> Result<Vec<PredictionTimeline>> {
    if keys.len() != preds.len() || keys.len() != truth.len() {
        return Err(Error::LengthMismatch {
            preds: preds.len(),
            truth: truth.len(),
        });
    }
    let mut by_video: BTreeMap<&str, Vec<(u32, usize)>> = BTreeMap::new();
    for (i, (v, t)) in keys.iter().enumerate() {
        by_video.entry(v.as_str()).or_default().push((*t, i));
    }
    by_video
        .into_iter()
        .map(|(video, mut items)| {
            items.sort_unstable();
            for (expected, (t, _)) in items.iter().enumerate() {
                if *t != expected as u32 {
                    return Err(Error::NonContiguous {
                        expected: expected as u32,
                        found: *t,
                    });
                }
            }
            PredictionTimeline::new(
                video,
                items.iter().map(|&(_, i)| preds[i].0).collect(),
                items.iter().map(|&(_, i)| preds[i].1).collect(),
                items.iter().map(|&(_, i)| truth[i]).collect(),
            )
        })
        .collect()
}

/// Cross-fold table: one row per method, one column per label fraction,
/// cells `mean (±std)`. Missing combinations are left empty.
pub fn table_csv(cells: &BTreeMap<(String, String), FoldReport>, methods: &[String], fractions: &[String]) -> String {
    let mut out = String::from("method");
    for f in fractions {
        out.push(',');
        out.push_str(f);
    }
    out.push('\n');
    for m in methods {
        out.push_str(m);
        for f in fractions {
            out.push(',');
            if let Some(r) = cells.get(&(m.clone(), f.clone())) {
                out.push('"');
                out.push_str(&r.cell());
                out.push('"');
            }
        }
        out.push('\n');
    }
    out
}

/// Column header for a label fraction, e.g. `5%` or `100%`.
pub fn fraction_label(fraction: f64) -> String {
    let pct = fraction * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}%", pct.round() as i64)
    } else {
        format!("{pct}%")
    }
}
