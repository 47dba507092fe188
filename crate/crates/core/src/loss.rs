//! Softmax cross-entropy losses with analytic gradients.
//!
//! Computed in `f64`; logits are row-major `batch x classes`.

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// d(value)/d(logits), same layout as the logits.
    pub grad: Vec<f64>,
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}

/// Cross-entropy averaged with per-sample weights: `sum_i w_i CE_i / sum_i w_i`.
/// Unit weights give the plain batch mean.
pub fn weighted_softmax_ce(
    logits: &[f64],
    n_classes: usize,
    labels: &[usize],
    sample_weight: impl Fn(usize) -> f64,
) -> Result<LossOutput> {
    if n_classes == 0 || logits.len() != labels.len() * n_classes {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {} labels x {} classes",
            logits.len(),
            labels.len(),
            n_classes
        )));
    }
    if labels.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::ShapeMismatch(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let weights: Vec<f64> = labels.iter().map(|&y| sample_weight(y)).collect();
    let total: f64 = weights.iter().sum();
    let mut value = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, (&y, &w)) in labels.iter().zip(&weights).enumerate() {
        let row = &logits[i * n_classes..(i + 1) * n_classes];
        let logp = log_softmax(row);
        value += w * -logp[y];
        for c in 0..n_classes {
            let p = logp[c].exp();
            grad[i * n_classes + c] = w * (p - if c == y { 1.0 } else { 0.0 }) / total;
        }
    }
    Ok(LossOutput {
        value: value / total,
        grad,
    })
}

/// Mean cross-entropy of the 4-way rotation classifier.
pub fn rotation_loss(logits: &[f64], labels: &[usize]) -> Result<LossOutput> {
    weighted_softmax_ce(logits, 4, labels, |_| 1.0)
}

/// Class weights for the binary fine-tuning objective.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassWeights {
    pub relevant: f64,
    pub irrelevant: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights {
            relevant: 0.15,
            irrelevant: 0.85,
        }
    }
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights {
        relevant: 1.0,
        irrelevant: 1.0,
    };

    pub fn of(&self, label: ClassLabel) -> f64 {
        match label {
            ClassLabel::Relevant => self.relevant,
            ClassLabel::Irrelevant => self.irrelevant,
        }
    }
}

/// Class-weighted binary cross-entropy, normalized by the sum of applied weights.
pub fn weighted_ce(logits: &[f64], labels: &[ClassLabel], weights: ClassWeights) -> Result<LossOutput> {
    if !(weights.relevant > 0.0 && weights.irrelevant > 0.0) {
        return Err(Error::Config("class weights must be positive".into()));
    }
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    weighted_softmax_ce(logits, 2, &idx, |y| {
        weights.of(ClassLabel::from_index(y).expect("binary label"))
    })
}
