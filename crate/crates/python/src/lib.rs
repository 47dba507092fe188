//! Python bindings: configs, metrics, edit lists, the synthetic corpus and
//! checkpoint inference. Labels cross the boundary as `"relevant"` /
//! `"irrelevant"` strings; images as flat row-major RGB float lists.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use endoscrub::config::ExperimentConfig;
use endoscrub::dataset::{self, ClassLabel, FrameStore, SegmentAnnotation};
use endoscrub::eval;
use endoscrub::model::{load_checkpoint, Model};
use endoscrub::preprocess::ImageTensor;
use endoscrub::pretext::{self, RotationAngle};
use endoscrub::scrub::{self, FramePrediction};
use endoscrub::synth::{self, SynthConfig};
use endoscrub::train::{self, FinetuneConfig, ImagePipeline};

create_exception!(endoscrub_py, EndoscrubError, PyException);

fn err(e: endoscrub::Error) -> PyErr {
    EndoscrubError::new_err(e.to_string())
}

fn label(s: &str) -> PyResult<ClassLabel> {
    s.parse().map_err(EndoscrubError::new_err)
}

fn labels(v: &[String]) -> PyResult<Vec<ClassLabel>> {
    v.iter().map(|s| label(s)).collect()
}

fn names(v: &[ClassLabel]) -> Vec<&'static str> {
    v.iter().map(|l| l.as_str()).collect()
}

/// Experiment configuration with every default filled in.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        PyConfig {
            inner: ExperimentConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::from_toml_str(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::load(&path).map_err(err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(err)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn label_fractions(&self) -> Vec<f64> {
        self.inner.label_fractions.clone()
    }

    #[getter]
    fn corpus_root(&self) -> PathBuf {
        self.inner.corpus.root.clone()
    }

    #[setter]
    fn set_corpus_root(&mut self, root: PathBuf) {
        self.inner.corpus.root = root;
    }

    #[getter]
    fn run_root(&self) -> PathBuf {
        self.inner.run_root.clone()
    }

    #[setter]
    fn set_run_root(&mut self, root: PathBuf) {
        self.inner.run_root = root;
    }
}

#[pyclass(name = "ConfusionMatrix", skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyConfusion {
    inner: eval::ConfusionMatrix,
}

#[pymethods]
impl PyConfusion {
    #[new]
    #[pyo3(signature = (tp=0, fp=0, fn_=0, tn=0))]
    fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        PyConfusion {
            inner: eval::ConfusionMatrix { tp, fp, fn_, tn },
        }
    }

    /// Counts with `irrelevant` as the positive class.
    #[staticmethod]
    fn from_labels(preds: Vec<String>, truth: Vec<String>) -> PyResult<Self> {
        let cm = eval::confusion(&labels(&preds)?, &labels(&truth)?).map_err(err)?;
        Ok(PyConfusion { inner: cm })
    }

    #[getter]
    fn tp(&self) -> u64 {
        self.inner.tp
    }

    #[getter]
    fn fp(&self) -> u64 {
        self.inner.fp
    }

    #[getter(fn_)]
    fn false_negatives(&self) -> u64 {
        self.inner.fn_
    }

    #[getter]
    fn tn(&self) -> u64 {
        self.inner.tn
    }

    fn macro_f1(&self) -> f64 {
        eval::macro_f1(&self.inner)
    }

    fn accuracy(&self) -> f64 {
        self.inner.accuracy()
    }

    /// `(precision, recall, f1)` in percent for one class.
    fn class_metrics(&self, cls: &str) -> PyResult<(f64, f64, f64)> {
        let m = eval::class_metrics(&self.inner, label(cls)?);
        Ok((m.precision, m.recall, m.f1))
    }

    fn __repr__(&self) -> String {
        let c = self.inner;
        format!("ConfusionMatrix(tp={}, fp={}, fn_={}, tn={})", c.tp, c.fp, c.fn_, c.tn)
    }
}

/// Mean, sample std and the `mean (±std)` table cell.
#[pyfunction]
fn aggregate_folds(values: Vec<f64>) -> PyResult<(f64, f64, String)> {
    let r = eval::aggregate_folds(&values).map_err(err)?;
    Ok((r.mean, r.std, r.cell()))
}

#[pyfunction]
fn subsample_size(fraction: f64, n: usize) -> usize {
    dataset::subsample_size(fraction, n)
}

#[pyfunction]
fn irrelevant_ratio(irrelevant: usize, relevant: usize) -> Option<f64> {
    dataset::irrelevant_ratio(irrelevant, relevant)
}

/// Case-level folds as `(train, val, test)` id lists.
#[pyfunction]
#[pyo3(signature = (video_ids, n_folds=5, seed=0, ratios=[0.45, 0.20, 0.35]))]
fn split_folds(
    video_ids: Vec<String>,
    n_folds: u32,
    seed: u64,
    ratios: [f64; 3],
) -> PyResult<Vec<(Vec<String>, Vec<String>, Vec<String>)>> {
    let folds = dataset::split_folds(&video_ids, n_folds, seed, ratios).map_err(err)?;
    Ok(folds.into_iter().map(|f| (f.train, f.val, f.test)).collect())
}

/// Fine-tuning learning rate at `epoch` under the default step schedule.
#[pyfunction]
#[pyo3(signature = (epoch, epochs=40))]
fn lr_schedule(epoch: u32, epochs: u32) -> f64 {
    train::lr_schedule(epoch, epochs, &FinetuneConfig::default())
}

#[pyfunction]
fn rle(labels_: Vec<String>) -> PyResult<String> {
    Ok(eval::rle(&labels(&labels_)?))
}

#[pyfunction]
fn parse_rle(text: &str) -> PyResult<Vec<&'static str>> {
    Ok(names(&eval::parse_rle(text).map_err(err)?))
}

/// Rotates a square `size x size` RGB image counterclockwise.
#[pyfunction]
fn rotate(pixels: Vec<f32>, size: usize, degrees: u32) -> PyResult<Vec<f32>> {
    let angle = RotationAngle::from_degrees(degrees)
        .ok_or_else(|| EndoscrubError::new_err(format!("{degrees} is not a multiple of 90")))?;
    let img = ImageTensor::new(size, size, pixels).map_err(err)?;
    Ok(pretext::rotate(&img, angle).map_err(err)?.data)
}

type Segment = (u32, u32, &'static str);

fn to_tuples(segs: &[SegmentAnnotation]) -> Vec<Segment> {
    segs.iter().map(|s| (s.start_s, s.end_s, s.label.as_str())).collect()
}

/// Per-second labels to `(start_s, end_s, label)` runs.
#[pyfunction]
fn segmentize(labels_: Vec<String>) -> PyResult<Vec<Segment>> {
    let preds: Vec<FramePrediction> = labels(&labels_)?
        .into_iter()
        .enumerate()
        .map(|(t, label)| FramePrediction {
            timestamp_s: t as u32,
            label,
            confidence: 1.0,
        })
        .collect();
    Ok(to_tuples(&scrub::segmentize("", &preds).map_err(err)?))
}

#[pyclass(name = "EditList")]
struct PyEditList {
    inner: scrub::EditList,
}

#[pymethods]
impl PyEditList {
    #[getter]
    fn remove(&self) -> Vec<(u32, u32)> {
        self.inner.remove.iter().map(|i| (i[0], i[1])).collect()
    }

    #[getter]
    fn keep(&self) -> Vec<(u32, u32)> {
        self.inner.keep.iter().map(|i| (i[0], i[1])).collect()
    }

    #[getter]
    fn duration_s(&self) -> u32 {
        self.inner.duration_s
    }

    fn removed_seconds(&self) -> u32 {
        self.inner.removed_seconds()
    }

    fn kept_seconds(&self) -> u32 {
        self.inner.kept_seconds()
    }

    fn is_removed(&self, t: u32) -> bool {
        self.inner.is_removed(t)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyEditList {
            inner: scrub::EditList::load(&path).map_err(err)?,
        })
    }
}

/// Edit list from contiguous `(start_s, end_s, label)` segments.
#[pyfunction]
#[pyo3(signature = (segments, margin_s=0, video_id=String::new()))]
fn make_edit_list(segments: Vec<(u32, u32, String)>, margin_s: i64, video_id: String) -> PyResult<PyEditList> {
    let segs = segments
        .into_iter()
        .map(|(start_s, end_s, l)| {
            Ok(SegmentAnnotation {
                video_id: video_id.clone(),
                start_s,
                end_s,
                label: label(&l)?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(PyEditList {
        inner: scrub::make_edit_list(&segs, margin_s).map_err(err)?,
    })
}

/// Writes a synthetic corpus under `out` and returns its segments per video.
#[pyfunction]
#[pyo3(signature = (out, n_videos=20, seed=1, height=720, width=1280, min_duration_s=45, max_duration_s=105))]
fn generate_synth(
    out: PathBuf,
    n_videos: u32,
    seed: u64,
    height: u32,
    width: u32,
    min_duration_s: u32,
    max_duration_s: u32,
) -> PyResult<Vec<(String, Vec<Segment>)>> {
    let cfg = SynthConfig {
        n_videos: n_videos as _,
        seed,
        height: height as _,
        width: width as _,
        duration_s: [min_duration_s as _, max_duration_s as _],
        ..SynthConfig::default()
    };
    let corpus = synth::generate_corpus(&cfg, &out).map_err(err)?;
    Ok(corpus
        .annotations
        .iter()
        .map(|(id, segs)| (id.clone(), to_tuples(segs)))
        .collect())
}

/// A trained binary checkpoint applied to extracted 1 fps frames.
#[pyclass(name = "Classifier")]
struct PyClassifier {
    model: Model,
    pipeline: ImagePipeline,
    phase: String,
}

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (model, meta) = load_checkpoint(&path).map_err(err)?;
        let pipeline = ImagePipeline {
            crop_size: meta.crop_size,
            input_size: model.config.input_size,
            ..ImagePipeline::default()
        };
        Ok(PyClassifier {
            model,
            pipeline,
            phase: format!("{:?}", meta.phase),
        })
    }

    #[getter]
    fn phase(&self) -> &str {
        &self.phase
    }

    /// `(timestamp_s, label, confidence)` for every second of a video in
    /// the frame store.
    fn classify_video(
        &self,
        frame_store: PathBuf,
        video_id: &str,
        duration_s: u32,
    ) -> PyResult<Vec<(u32, &'static str, f64)>> {
        let store = FrameStore::new(frame_store);
        let preds = scrub::classify_video(&self.model, &store, video_id, duration_s, &self.pipeline).map_err(err)?;
        Ok(preds
            .into_iter()
            .map(|p| (p.timestamp_s, p.label.as_str(), p.confidence))
            .collect())
    }
}

#[pymodule]
fn endoscrub_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EndoscrubError", m.py().get_type::<EndoscrubError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyConfusion>()?;
    m.add_class::<PyEditList>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(aggregate_folds, m)?)?;
    m.add_function(wrap_pyfunction!(subsample_size, m)?)?;
    m.add_function(wrap_pyfunction!(irrelevant_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(split_folds, m)?)?;
    m.add_function(wrap_pyfunction!(lr_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(rle, m)?)?;
    m.add_function(wrap_pyfunction!(parse_rle, m)?)?;
    m.add_function(wrap_pyfunction!(rotate, m)?)?;
    m.add_function(wrap_pyfunction!(segmentize, m)?)?;
    m.add_function(wrap_pyfunction!(make_edit_list, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synth, m)?)?;
    Ok(())
}
