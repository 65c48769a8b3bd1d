//! Confusion matrices, precision/recall/F1/accuracy and the three losses.
//!
//! Undefined ratios (0/0) score 0 and set `ScoreReport::undefined`.
//! Probabilities are clamped to `[EPS, 1 - EPS]` before any logarithm.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::ProbMatrix;
use crate::scalar::Scalar;

/// Clamping constant for log-based losses.
pub const EPS: f64 = 1e-12;

/// `counts[t][p]` = number of items with true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    total: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::shape("confusion matrix must be square and non-empty"));
        }
        let total = counts.iter().flatten().sum();
        Ok(ConfusionMatrix { counts, total })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum::<u64>() - self.tp(c)
    }

    pub fn fn_(&self, c: usize) -> u64 {
        self.counts[c].iter().sum::<u64>() - self.tp(c)
    }

    pub fn tn(&self, c: usize) -> u64 {
        self.total - self.tp(c) - self.fp(c) - self.fn_(c)
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|c| self.tp(c)).sum()
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::shape(format!("{} true labels vs {} predictions", y_true.len(), y_pred.len())));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidDataset("confusion matrix of zero items".into()));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for label in [t, p] {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_class: Vec<ClassScores>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub averaging: Averaging,
    /// Some ratio was 0/0 and was scored as 0.
    pub undefined: bool,
}

impl ScoreReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("score report serializes")
    }
}

fn ratio(num: u64, den: u64, undefined: &mut bool) -> f64 {
    if den == 0 {
        *undefined = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_report(cm: &ConfusionMatrix) -> Result<ScoreReport> {
    if cm.total() == 0 {
        return Err(Error::InvalidDataset("score report of zero items".into()));
    }
    let mut undefined = false;
    let per_class: Vec<ClassScores> = (0..cm.classes())
        .map(|c| {
            let (tp, fp, fn_) = (cm.tp(c), cm.fp(c), cm.fn_(c));
            let precision = ratio(tp, tp + fp, &mut undefined);
            let recall = ratio(tp, tp + fn_, &mut undefined);
            let f1 = if precision + recall == 0.0 {
                undefined = true;
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores { precision, recall, f1, support: tp + fn_ }
        })
        .collect();
    let c = per_class.len() as f64;
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / c;
    let accuracy = cm.trace() as f64 / cm.total() as f64;
    Ok(ScoreReport {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        per_class,
        accuracy,
        micro_precision: accuracy,
        micro_recall: accuracy,
        averaging: Averaging::Macro,
        undefined,
    })
}

/// Confusion matrix and report in one call.
pub fn score(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ScoreReport> {
    classification_report(&confusion(y_true, y_pred, classes)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Cce,
    Mse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Cce => "cce",
            LossKind::Mse => "mse",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LossValue<T> {
    pub value: T,
    pub kind: LossKind,
}

fn clamp<T: Scalar>(p: T) -> T {
    let eps = T::lit(EPS);
    p.max(eps).min(T::one() - eps)
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{a} predictions vs {b} labels")));
    }
    if a == 0 {
        return Err(Error::InvalidDataset("loss over zero items".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy; `p` is the positive-class probability.
pub fn bce_loss<T: Scalar>(p: &[T], y: &[u8]) -> Result<LossValue<T>> {
    check_len(p.len(), y.len())?;
    let mut sum = T::zero();
    for (&pi, &yi) in p.iter().zip(y) {
        let pi = clamp(pi);
        sum += if yi != 0 { pi.ln() } else { (T::one() - pi).ln() };
    }
    Ok(LossValue { value: (-sum / T::from_count(p.len())).max(T::zero()), kind: LossKind::Bce })
}

fn check_labels<T: Scalar>(p: &ProbMatrix<T>, y: &[usize]) -> Result<()> {
    check_len(p.rows(), y.len())?;
    match y.iter().find(|&&l| l >= p.classes()) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes: p.classes() }),
        None => Ok(()),
    }
}

/// Mean sparse categorical cross-entropy.
pub fn cce_loss<T: Scalar>(p: &ProbMatrix<T>, y: &[usize]) -> Result<LossValue<T>> {
    check_labels(p, y)?;
    let sum = p.iter_rows().zip(y).fold(T::zero(), |acc, (row, &l)| acc + clamp(row[l]).ln());
    Ok(LossValue { value: (-sum / T::from_count(y.len())).max(T::zero()), kind: LossKind::Cce })
}

/// Squared distance to the one-hot label, summed over classes and averaged over rows.
pub fn mse<T: Scalar>(p: &ProbMatrix<T>, y: &[usize]) -> Result<LossValue<T>> {
    check_labels(p, y)?;
    let mut sum = T::zero();
    for (row, &l) in p.iter_rows().zip(y) {
        for (c, &v) in row.iter().enumerate() {
            let d = if c == l { v - T::one() } else { v };
            sum += d * d;
        }
    }
    Ok(LossValue { value: sum / T::from_count(y.len()), kind: LossKind::Mse })
}
