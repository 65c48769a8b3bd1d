//! Stacking: heterogeneous base classifiers, out-of-fold meta-features and a
//! meta-level classifier over the concatenated base probabilities.

mod base;
mod meta;
mod stack;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SparseMatrix;
use crate::neural::Inputs;
use crate::prob::ProbMatrix;
use crate::scalar::Scalar;
use crate::tokenizer::TokenSequence;

pub use base::{BaseModel, BaseModelSpec, BaseSpec, Pretraining};
pub(crate) use base::train_base;
pub use meta::{build_meta, MetaKind, MetaModel, MetaSpec};
pub use stack::{stack_predict, stack_train, LeakAudit, StackOutcome, StackSpec, StackedModel};

/// Base predictions side by side: base `b` owns columns `[b·C, (b+1)·C)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MetaMatrix<T> {
    rows: usize,
    bases: usize,
    classes: usize,
    data: Vec<T>,
}

impl<T: Scalar> MetaMatrix<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn bases(&self) -> usize {
        self.bases
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn width(&self) -> usize {
        self.bases * self.classes
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.width()..(i + 1) * self.width()]
    }

    /// Base `b`'s probabilities for row `i`.
    pub fn block(&self, i: usize, b: usize) -> &[T] {
        &self.row(i)[b * self.classes..(b + 1) * self.classes]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let data = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        MetaMatrix { rows: idx.len(), bases: self.bases, classes: self.classes, data }
    }

    /// One token per base for the transformer-head meta.
    pub fn to_inputs(&self) -> Inputs<T> {
        Inputs::Dense { rows: self.rows, values: self.data.clone() }
    }

    pub fn to_sparse(&self) -> SparseMatrix<T> {
        SparseMatrix::from_dense(&self.data, self.rows, self.width()).expect("probabilities are finite")
    }
}

/// Concatenates base probability matrices in base order.
pub fn meta_features<T: Scalar>(base_predictions: &[ProbMatrix<T>]) -> Result<MetaMatrix<T>> {
    let first = base_predictions.first().ok_or_else(|| Error::shape("no base predictions"))?;
    let (rows, classes) = (first.rows(), first.classes());
    if let Some((b, p)) = base_predictions.iter().enumerate().find(|(_, p)| p.rows() != rows || p.classes() != classes) {
        return Err(Error::shape(format!("base {b} is {}x{}, base 0 is {rows}x{classes}", p.rows(), p.classes())));
    }
    let bases = base_predictions.len();
    let mut data = Vec::with_capacity(rows * bases * classes);
    for i in 0..rows {
        for p in base_predictions {
            data.extend_from_slice(p.row(i));
        }
    }
    Ok(MetaMatrix { rows, bases, classes, data })
}

/// Per-row encodings for every feature path the bases may need.
#[derive(Clone, Debug, PartialEq)]
pub struct StackInputs<T> {
    pub rows: usize,
    /// TF-IDF (or any sparse) features for classical bases.
    pub sparse: Option<SparseMatrix<T>>,
    /// Token sequences for transformer bases.
    pub tokens: Option<Vec<TokenSequence>>,
}

impl<T: Scalar> StackInputs<T> {
    pub fn new(sparse: Option<SparseMatrix<T>>, tokens: Option<Vec<TokenSequence>>) -> Result<Self> {
        let rows = match (&sparse, &tokens) {
            (Some(s), Some(t)) if s.len() != t.len() => {
                return Err(Error::shape(format!("{} sparse rows vs {} token rows", s.len(), t.len())))
            }
            (Some(s), _) => s.len(),
            (None, Some(t)) => t.len(),
            (None, None) => return Err(Error::shape("no feature path given")),
        };
        Ok(StackInputs { rows, sparse, tokens })
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        StackInputs {
            rows: idx.len(),
            sparse: self.sparse.as_ref().map(|s| s.select(idx)),
            tokens: self.tokens.as_ref().map(|t| idx.iter().map(|&i| t[i].clone()).collect()),
        }
    }
}

/// Encoded rows with labels in `0..classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct StackData<T> {
    pub inputs: StackInputs<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl<T: Scalar> StackData<T> {
    pub fn new(inputs: StackInputs<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.rows != labels.len() {
            return Err(Error::shape(format!("{} rows vs {} labels", inputs.rows, labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(StackData { inputs, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        StackData { inputs: self.inputs.select(idx), labels: idx.iter().map(|&i| self.labels[i]).collect(), classes: self.classes }
    }
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin,
/// continuing the deal across classes so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[usize], classes: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config("at least two folds are required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut next = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    for f in 0..folds {
        let size = fold_of.iter().filter(|&&x| x == f).count();
        if size < classes {
            return Err(Error::InvalidDataset(format!("fold {f} has {size} rows, fewer than the {classes} classes")));
        }
    }
    Ok(fold_of)
}

/// 64-bit FNV-1a, used to derive per-base seeds from base names.
pub(crate) fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// SplitMix64 finalizer over the combined inputs.
pub(crate) fn derive_seed(seed: u64, name: &str, round: u64) -> u64 {
    let mut z = seed ^ name_hash(name).rotate_left(17) ^ round.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests;
