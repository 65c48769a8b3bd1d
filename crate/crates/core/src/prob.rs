//! Row-stochastic class-probability matrices and the decision rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::softmax_in_place;
use crate::scalar::Scalar;

/// Binary decision threshold: a positive-class probability at or above this
/// value selects class 1.
pub const BINARY_THRESHOLD: f64 = 0.5;

/// `N × C` matrix of class probabilities, one distribution per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ProbMatrix<T> {
    rows: usize,
    classes: usize,
    data: Vec<T>,
}

impl<T: Scalar> ProbMatrix<T> {
    /// Validates shape and the simplex property of every row.
    pub fn new(rows: usize, classes: usize, data: Vec<T>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::shape("probability matrix needs at least one class"));
        }
        if data.len() != rows * classes {
            return Err(Error::shape(format!(
                "expected {rows}×{classes} = {} entries, got {}",
                rows * classes,
                data.len()
            )));
        }
        let tol = T::epsilon().sqrt() * T::lit(4.0);
        for (i, row) in data.chunks(classes).enumerate() {
            if row.iter().any(|&p| !p.is_finite() || p < T::zero()) {
                return Err(Error::shape(format!("row {i} has a negative or non-finite probability")));
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol {
                return Err(Error::shape(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(ProbMatrix { rows, classes, data })
    }

    /// Row-wise softmax of raw scores.
    pub fn from_scores(rows: usize, classes: usize, mut scores: Vec<T>) -> Result<Self> {
        if scores.len() != rows * classes || classes == 0 {
            return Err(Error::shape("score matrix has the wrong size"));
        }
        for row in scores.chunks_mut(classes) {
            softmax_in_place(row);
        }
        Self::new(rows, classes, scores)
    }

    /// Every row equal to the uniform distribution.
    pub fn uniform(rows: usize, classes: usize) -> Self {
        let p = T::one() / T::from_count(classes);
        ProbMatrix { rows, classes, data: vec![p; rows * classes] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.classes)
    }

    /// Predicted label of every row (see [`decide`]).
    pub fn predict(&self) -> Vec<usize> {
        self.iter_rows().map(decide).collect()
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.classes);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        ProbMatrix { rows: idx.len(), classes: self.classes, data }
    }

    /// Element-wise mean of several matrices with identical shape.
    pub fn mean(parts: &[ProbMatrix<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::shape("no matrices to average"))?;
        let mut data = vec![T::zero(); first.data.len()];
        for p in parts {
            if p.rows != first.rows || p.classes != first.classes {
                return Err(Error::shape("cannot average matrices of different shapes"));
            }
            for (d, &v) in data.iter_mut().zip(&p.data) {
                *d += v;
            }
        }
        let n = T::from_count(parts.len());
        data.iter_mut().for_each(|d| *d /= n);
        Ok(ProbMatrix { rows: first.rows, classes: first.classes, data })
    }
}

/// Decision rule for one probability row.
///
/// Binary rows use the threshold rule: probability of class 1 `>= 0.5`
/// selects class 1. Otherwise the highest-probability index wins and ties go
/// to the lowest index.
pub fn decide<T: Scalar>(row: &[T]) -> usize {
    if row.len() == 2 {
        return usize::from(row[1] >= T::lit(BINARY_THRESHOLD));
    }
    argmax(row)
}

/// Index of the maximum, lowest index on ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_rule_examples() {
        assert_eq!(decide(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(decide(&[0.4, 0.4, 0.2]), 0);
        // binary: exactly 0.5 selects class 1
        assert_eq!(decide(&[0.5, 0.5]), 1);
        assert_eq!(decide(&[0.5000001, 0.4999999]), 0);
    }

    #[test]
    fn validation_rejects_bad_rows() {
        assert!(ProbMatrix::new(1, 2, vec![0.7, 0.7]).is_err());
        assert!(ProbMatrix::new(1, 2, vec![-0.1, 1.1]).is_err());
        assert!(ProbMatrix::new(2, 2, vec![0.5, 0.5]).is_err());
        assert!(ProbMatrix::new(1, 2, vec![0.25f32, 0.75]).is_ok());
    }

    #[test]
    fn zero_scores_give_uniform_rows() {
        let p = ProbMatrix::from_scores(3, 4, vec![0.0f64; 12]).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.25));
        assert_eq!(p, ProbMatrix::uniform(3, 4));
    }
}
