//! Baseline classifiers on TF-IDF features: linear SVM, logistic
//! regression, random forest, gradient boosting (level-wise and leaf-wise)
//! and the passive-aggressive classifier.

mod boost;
mod forest;
mod linear;
mod tree;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SparseMatrix;
use crate::linalg::{sigmoid, softmax_in_place};
use crate::prob::ProbMatrix;
use crate::scalar::Scalar;

pub use boost::Booster;
pub use linear::lr_loss_and_grad;
pub use tree::{Node, Tree};

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassicalKind {
    #[serde(rename = "LSVM")]
    Lsvm,
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "LGBM")]
    Lgbm,
    #[serde(rename = "GB")]
    Gb,
    #[serde(rename = "PAC")]
    Pac,
}

impl ClassicalKind {
    /// Table order.
    pub const ALL: [ClassicalKind; 6] =
        [ClassicalKind::Lsvm, ClassicalKind::Lr, ClassicalKind::Rf, ClassicalKind::Lgbm, ClassicalKind::Gb, ClassicalKind::Pac];

    pub fn name(self) -> &'static str {
        match self {
            ClassicalKind::Lsvm => "LSVM",
            ClassicalKind::Lr => "LR",
            ClassicalKind::Rf => "RF",
            ClassicalKind::Lgbm => "LGBM",
            ClassicalKind::Gb => "GB",
            ClassicalKind::Pac => "PAC",
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(self, ClassicalKind::Lsvm | ClassicalKind::Lr | ClassicalKind::Pac)
    }
}

impl fmt::Display for ClassicalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ClassicalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassicalKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown classical model `{s}` (expected one of LSVM, LR, RF, LGBM, GB, PAC)")))
    }
}

/// Training hyperparameters. Fields a kind does not use are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty for the SGD learners.
    pub l2: f64,
    /// Trees (RF) or boosting rounds (GB, LGBM).
    pub tree_count: usize,
    pub max_depth: Option<usize>,
    /// Leaf cap for leaf-wise boosting.
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    /// Hessian regularizer for Newton leaf values.
    pub newton_lambda: f64,
    pub seed: u64,
}

impl TrainSpec {
    pub fn for_kind(kind: ClassicalKind, seed: u64) -> Self {
        let base = TrainSpec {
            epochs: 50,
            learning_rate: 0.1,
            l2: 1e-4,
            tree_count: 100,
            max_depth: None,
            max_leaves: 31,
            min_samples_leaf: 1,
            bootstrap: true,
            newton_lambda: 1.0,
            seed,
        };
        match kind {
            ClassicalKind::Rf => TrainSpec { max_depth: Some(12), ..base },
            ClassicalKind::Gb => TrainSpec { max_depth: Some(4), ..base },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs as f64),
            ("tree_count", self.tree_count as f64),
            ("max_leaves", self.max_leaves as f64),
            ("min_samples_leaf", self.min_samples_leaf as f64),
            ("max_depth", self.max_depth.unwrap_or(1) as f64),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("l2", self.l2), ("newton_lambda", self.newton_lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum Params<T> {
    /// `weights` is heads×D row-major; a binary model has one head whose
    /// margin goes through the logistic link.
    Linear { weights: Vec<T>, bias: Vec<T> },
    Forest { trees: Vec<Tree<T>> },
    Boosted(Booster<T>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClassicalModel<T> {
    version: u32,
    kind: ClassicalKind,
    classes: usize,
    features: usize,
    params: Params<T>,
}

fn check_training<T: Scalar>(x: &SparseMatrix<T>, y: &[usize], classes: usize) -> Result<()> {
    if x.is_empty() {
        return Err(Error::InvalidDataset("no training rows".into()));
    }
    if x.len() != y.len() {
        return Err(Error::shape(format!("{} rows vs {} labels", x.len(), y.len())));
    }
    if let Some(&label) = y.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    if y.iter().all(|&l| l == y[0]) {
        return Err(Error::SingleClass);
    }
    for (i, r) in x.rows().iter().enumerate() {
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i });
        }
    }
    Ok(())
}

/// Trains one baseline. Identical inputs give bit-identical models.
pub fn train_classical<T: Scalar>(
    kind: ClassicalKind,
    x: &SparseMatrix<T>,
    y: &[usize],
    classes: usize,
    spec: &TrainSpec,
) -> Result<ClassicalModel<T>> {
    check_training(x, y, classes)?;
    spec.validate()?;
    let params = match kind {
        ClassicalKind::Lsvm => {
            let (weights, bias) = linear::train_lsvm(x, y, classes, spec);
            Params::Linear { weights, bias }
        }
        ClassicalKind::Lr => {
            let (weights, bias) = linear::train_lr(x, y, classes, spec);
            Params::Linear { weights, bias }
        }
        ClassicalKind::Pac => {
            let (weights, bias) = linear::train_pac(x, y, classes, spec);
            Params::Linear { weights, bias }
        }
        ClassicalKind::Rf => Params::Forest { trees: forest::train_forest(x, y, classes, spec) },
        ClassicalKind::Gb => Params::Boosted(boost::train_booster(x, y, classes, spec, false)),
        ClassicalKind::Lgbm => Params::Boosted(boost::train_booster(x, y, classes, spec, true)),
    };
    Ok(ClassicalModel { version: FORMAT_VERSION, kind, classes, features: x.dim(), params })
}

impl<T: Scalar> ClassicalModel<T> {
    /// A linear model from explicit weights (`heads`×`features`, one head when binary).
    pub fn linear(kind: ClassicalKind, classes: usize, features: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if !kind.is_linear() {
            return Err(Error::Config(format!("{kind} is not a linear model")));
        }
        let heads = if classes == 2 { 1 } else { classes };
        if classes < 2 || bias.len() != heads || weights.len() != heads * features {
            return Err(Error::shape(format!("{classes} classes need {heads}x{features} weights and {heads} biases")));
        }
        Ok(ClassicalModel { version: FORMAT_VERSION, kind, classes, features, params: Params::Linear { weights, bias } })
    }

    pub fn kind(&self) -> ClassicalKind {
        self.kind
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn predict_proba(&self, x: &SparseMatrix<T>) -> Result<ProbMatrix<T>> {
        if x.dim() != self.features {
            return Err(Error::shape(format!("model expects {} features, got {}", self.features, x.dim())));
        }
        let c = self.classes;
        let mut out = vec![T::zero(); x.len() * c];
        for (row, xi) in out.chunks_mut(c).zip(x.rows()) {
            match &self.params {
                Params::Linear { weights, bias } => {
                    let d = self.features;
                    if bias.len() == 1 {
                        let p = sigmoid(xi.dot_dense(weights) + bias[0]);
                        row[0] = T::one() - p;
                        row[1] = p;
                    } else {
                        for (k, r) in row.iter_mut().enumerate() {
                            *r = xi.dot_dense(&weights[k * d..(k + 1) * d]) + bias[k];
                        }
                        softmax_in_place(row);
                    }
                }
                Params::Forest { trees } => {
                    for t in trees {
                        row.iter_mut().zip(t.leaf(xi)).for_each(|(r, &v)| *r += v);
                    }
                    let n = T::from_count(trees.len());
                    row.iter_mut().for_each(|r| *r /= n);
                }
                Params::Boosted(b) => {
                    row.copy_from_slice(&b.scores(xi));
                    softmax_in_place(row);
                }
            }
        }
        ProbMatrix::new(x.len(), c, out)
    }

    pub fn predict(&self, x: &SparseMatrix<T>) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.predict())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported classical model version {}", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SparseVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 20 points split by the line x0 + 2 x1 = 1.5.
    fn separable() -> (SparseMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut data = Vec::new();
        let mut y = Vec::new();
        while y.len() < 20 {
            let (a, b): (f64, f64) = (rng.random_range(0.0..2.0), rng.random_range(0.0..1.5));
            let side = a + 2.0 * b - 1.5;
            if side.abs() < 0.3 {
                continue;
            }
            data.extend([a, b]);
            y.push(usize::from(side > 0.0));
        }
        (SparseMatrix::from_dense(&data, 20, 2).unwrap(), y)
    }

    /// Brute-force oracle: some line on a coarse grid separates the fixture.
    fn grid_separable(x: &SparseMatrix<f64>, y: &[usize]) -> bool {
        let steps: Vec<f64> = (-20..=20).map(|i| i as f64 / 4.0).collect();
        steps.iter().any(|&w0| {
            steps.iter().any(|&w1| {
                steps.iter().any(|&b| {
                    x.rows().iter().zip(y).all(|(r, &l)| (r.get(0) * w0 + r.get(1) * w1 + b > 0.0) == (l == 1))
                })
            })
        })
    }

    fn accuracy(m: &ClassicalModel<f64>, x: &SparseMatrix<f64>, y: &[usize]) -> f64 {
        let p = m.predict(x).unwrap();
        p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    fn blobs(n: usize, classes: usize, seed: u64) -> (SparseMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 6;
        let mut data = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % classes;
            for j in 0..dim {
                let centre = if j % classes == c { 2.0 } else { 0.0 };
                let v: f64 = centre + rng.random_range(-0.8..0.8);
                data.push(if v.abs() < 0.2 { 0.0 } else { v });
            }
            y.push(c);
        }
        (SparseMatrix::from_dense(&data, n, dim).unwrap(), y)
    }

    #[test]
    fn lr_fits_separable_fixture() {
        let (x, y) = separable();
        assert!(grid_separable(&x, &y));
        let spec = TrainSpec { epochs: 500, learning_rate: 1.0, ..TrainSpec::for_kind(ClassicalKind::Lr, 1) };
        let m = train_classical(ClassicalKind::Lr, &x, &y, 2, &spec).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn every_kind_learns_blobs() {
        let (x, y) = blobs(120, 3, 9);
        let (xt, yt) = blobs(60, 3, 10);
        for kind in ClassicalKind::ALL {
            let spec = TrainSpec { tree_count: 20, ..TrainSpec::for_kind(kind, 3) };
            let m = train_classical(kind, &x, &y, 3, &spec).unwrap();
            let acc = accuracy(&m, &xt, &yt);
            assert!(acc > 0.9, "{kind}: {acc}");
            let p = m.predict_proba(&xt).unwrap();
            assert_eq!(p.predict(), m.predict(&xt).unwrap());
        }
    }

    #[test]
    fn single_unrestricted_tree_memorises() {
        let (x, y) = blobs(80, 4, 2);
        let spec = TrainSpec { tree_count: 1, bootstrap: false, max_depth: None, ..TrainSpec::for_kind(ClassicalKind::Rf, 0) };
        let m = train_classical(ClassicalKind::Rf, &x, &y, 4, &spec).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let m = ClassicalModel::<f64>::linear(ClassicalKind::Lr, 4, 3, vec![0.0; 12], vec![0.0; 4]).unwrap();
        let x = SparseMatrix::from_dense(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0], 2, 3).unwrap();
        assert!(m.predict_proba(&x).unwrap().as_slice().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn hand_set_softmax() {
        // scores: [1*1 + 0*2, 0*1 + 1*2, 1*1 + 1*2 - 1] = [1, 2, 2]
        let w = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let m = ClassicalModel::<f64>::linear(ClassicalKind::Lr, 3, 2, w, vec![0.0, 0.0, -1.0]).unwrap();
        let x = SparseMatrix::from_dense(&[1.0, 2.0], 1, 2).unwrap();
        let p = m.predict_proba(&x).unwrap();
        let z = 1f64.exp() + 2.0 * 2f64.exp();
        let want = [1f64.exp() / z, 2f64.exp() / z, 2f64.exp() / z];
        for (a, b) in p.row(0).iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(m.predict(&x).unwrap(), vec![1]);
        assert!(m.predict_proba(&SparseMatrix::from_dense(&[1.0], 1, 1).unwrap()).is_err());
    }

    #[test]
    fn binary_threshold_at_half() {
        let m = ClassicalModel::<f64>::linear(ClassicalKind::Pac, 2, 1, vec![0.0], vec![0.0]).unwrap();
        let x = SparseMatrix::from_dense(&[1.0], 1, 1).unwrap();
        assert_eq!(m.predict_proba(&x).unwrap().row(0), &[0.5, 0.5]);
        assert_eq!(m.predict(&x).unwrap(), vec![1]);
    }

    #[test]
    fn training_errors() {
        let (x, y) = blobs(10, 2, 0);
        let spec = TrainSpec::for_kind(ClassicalKind::Lr, 0);
        assert!(matches!(train_classical(ClassicalKind::Lr, &x, &[0; 10], 2, &spec), Err(Error::SingleClass)));
        assert!(train_classical(ClassicalKind::Lr, &x, &y[..5], 2, &spec).is_err());
        let empty = SparseMatrix::<f64>::new(vec![], 3).unwrap();
        assert!(train_classical(ClassicalKind::Lr, &empty, &[], 2, &spec).is_err());
        let bad = TrainSpec { epochs: 0, ..spec };
        assert!(train_classical(ClassicalKind::Lr, &x, &y, 2, &bad).is_err());
    }

    #[test]
    fn lr_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for classes in [2usize, 3, 4] {
            let (x, y) = blobs(12, classes, rng.random());
            let heads = if classes == 2 { 1 } else { classes };
            let w: Vec<f64> = (0..heads * x.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..heads).map(|_| rng.random_range(-1.0..1.0)).collect();
            let l2 = 0.01;
            let (_, gw, gb) = lr_loss_and_grad(&w, &b, &x, &y, classes, l2);
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for j in 0..w.len() + b.len() {
                let bump = |delta: f64| {
                    let (mut w2, mut b2) = (w.clone(), b.clone());
                    if j < w.len() {
                        w2[j] += delta;
                    } else {
                        b2[j - w.len()] += delta;
                    }
                    lr_loss_and_grad(&w2, &b2, &x, &y, classes, l2).0
                };
                let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                let analytic = if j < w.len() { gw[j] } else { gb[j - w.len()] };
                worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8));
            }
            assert!(worst < 1e-5, "classes {classes}: {worst}");
        }
    }

    #[test]
    fn boosting_loss_never_increases() {
        let (x, y) = blobs(90, 3, 4);
        for kind in [ClassicalKind::Gb, ClassicalKind::Lgbm] {
            let spec = TrainSpec { tree_count: 30, learning_rate: 0.5, ..TrainSpec::for_kind(kind, 0) };
            let m = train_classical(kind, &x, &y, 3, &spec).unwrap();
            let Params::Boosted(b) = m.params() else { panic!("boosted params") };
            assert!(b.train_loss.windows(2).all(|w| w[1] <= w[0]), "{kind}");
            assert!(b.train_loss.last().unwrap() < &b.train_loss[0]);
            if kind == ClassicalKind::Lgbm {
                assert!(b.rounds.iter().flatten().all(|t| t.leaf_count() <= 31));
            } else {
                assert!(b.rounds.iter().flatten().all(|t| t.depth() <= 4));
            }
        }
    }

    #[test]
    fn deterministic_and_round_trips() {
        let (x, y) = blobs(60, 3, 8);
        for kind in ClassicalKind::ALL {
            let spec = TrainSpec { tree_count: 5, epochs: 5, ..TrainSpec::for_kind(kind, 42) };
            let a = train_classical(kind, &x, &y, 3, &spec).unwrap();
            let b = train_classical(kind, &x, &y, 3, &spec).unwrap();
            assert_eq!(a, b, "{kind}");
            let back = ClassicalModel::<f64>::from_json(&a.to_json()).unwrap();
            assert_eq!(back.predict_proba(&x).unwrap(), a.predict_proba(&x).unwrap(), "{kind}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn probabilities_are_row_stochastic(seed in 0u64..1000, kind_idx in 0usize..6, classes in 2usize..5) {
            let kind = ClassicalKind::ALL[kind_idx];
            let (x, y) = blobs(30, classes, seed);
            let spec = TrainSpec { tree_count: 4, epochs: 4, ..TrainSpec::for_kind(kind, seed) };
            let m = train_classical(kind, &x, &y, classes, &spec).unwrap();
            let p = m.predict_proba(&x).unwrap();
            for row in p.iter_rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
            if classes == 2 {
                let threshold: Vec<usize> = p.iter_rows().map(|r| usize::from(r[1] >= 0.5)).collect();
                prop_assert_eq!(threshold, m.predict(&x).unwrap());
            }
        }
    }

    #[test]
    fn sparse_rows_with_unseen_features_are_rejected() {
        let err = SparseMatrix::<f64>::new(vec![SparseVector::from_pairs([(5, 1.0)])], 3);
        assert!(err.is_err());
    }
}
