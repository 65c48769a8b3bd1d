use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, GrowParams, Tree};
use super::TrainSpec;
use crate::features::SparseMatrix;
use crate::linalg::softmax_in_place;
use crate::scalar::Scalar;

/// Softmax gradient boosting: one regression tree per class per round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Booster<T> {
    /// Log class priors.
    pub init: Vec<T>,
    /// `rounds[r][c]` is the tree added to class `c`'s score in round `r`.
    pub rounds: Vec<Vec<Tree<T>>>,
    /// Training cross-entropy before the first round and after each round.
    pub train_loss: Vec<T>,
}

impl<T: Scalar> Booster<T> {
    pub fn scores(&self, x: &crate::features::SparseVector<T>) -> Vec<T> {
        let mut f = self.init.clone();
        for round in &self.rounds {
            for (fc, tree) in f.iter_mut().zip(round) {
                *fc += tree.leaf(x)[0];
            }
        }
        f
    }
}

fn mean_cce<T: Scalar>(f: &[T], y: &[usize], classes: usize) -> T {
    let mut p = vec![T::zero(); classes];
    let mut sum = T::zero();
    for (i, &l) in y.iter().enumerate() {
        p.copy_from_slice(&f[i * classes..(i + 1) * classes]);
        softmax_in_place(&mut p);
        sum -= p[l].max(T::min_positive_value()).ln();
    }
    sum / T::from_count(y.len())
}

/// Level-wise (depth-capped) or leaf-wise (leaf-capped) boosting with
/// Newton leaf values. A round whose full step would raise the training
/// loss is retried at half the step, then dropped.
pub(crate) fn train_booster<T: Scalar>(
    x: &SparseMatrix<T>,
    y: &[usize],
    classes: usize,
    spec: &TrainSpec,
    leaf_wise: bool,
) -> Booster<T> {
    let n = x.len();
    let mut counts = vec![0usize; classes];
    y.iter().for_each(|&l| counts[l] += 1);
    let init: Vec<T> =
        counts.iter().map(|&c| (T::from_count(c.max(1)) / T::from_count(n)).ln()).collect();
    let mut f: Vec<T> = (0..n).flat_map(|_| init.iter().copied()).collect();
    let mut loss = mean_cce(&f, y, classes);
    let mut booster = Booster { init, rounds: Vec::new(), train_loss: vec![loss] };

    let params = GrowParams {
        max_depth: if leaf_wise { spec.max_depth } else { spec.max_depth.or(Some(4)) },
        max_leaves: if leaf_wise { Some(spec.max_leaves) } else { None },
        min_samples_leaf: spec.min_samples_leaf,
        max_features: None,
        leaf_wise,
    };
    let crit = Criterion::Newton { lambda: T::lit(spec.newton_lambda) };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows: Vec<usize> = (0..n).collect();
    let mut p = vec![T::zero(); classes];
    let mut stats = vec![vec![T::zero(); 2 * n]; classes];

    for _ in 0..spec.tree_count {
        for i in 0..n {
            p.copy_from_slice(&f[i * classes..(i + 1) * classes]);
            softmax_in_place(&mut p);
            for c in 0..classes {
                let target = if y[i] == c { T::one() } else { T::zero() };
                stats[c][2 * i] = (p[c] * (T::one() - p[c])).max(T::lit(1e-16));
                stats[c][2 * i + 1] = p[c] - target;
            }
        }
        let mut trees: Vec<Tree<T>> =
            (0..classes).map(|c| grow(x, rows.clone(), &stats[c], crit, params, &mut rng)).collect();
        let deltas: Vec<T> = (0..n)
            .flat_map(|i| trees.iter().map(move |t| t.leaf(x.row(i))[0]).collect::<Vec<_>>())
            .collect();
        let mut step = T::lit(spec.learning_rate);
        let mut accepted = None;
        for _ in 0..8 {
            let trial: Vec<T> = f.iter().zip(&deltas).map(|(&a, &d)| a + step * d).collect();
            let trial_loss = mean_cce(&trial, y, classes);
            if trial_loss <= loss {
                accepted = Some((trial, trial_loss));
                break;
            }
            step /= T::lit(2.0);
        }
        let Some((next, next_loss)) = accepted else { break };
        trees.iter_mut().for_each(|t| t.scale_leaves(step));
        f = next;
        loss = next_loss;
        booster.rounds.push(trees);
        booster.train_loss.push(loss);
    }
    booster
}
