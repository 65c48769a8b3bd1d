use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tree::{grow, Criterion, GrowParams, Tree};
use super::TrainSpec;
use crate::features::SparseMatrix;
use crate::scalar::Scalar;

/// Bagged Gini trees. Tree `t` draws from its own ChaCha stream, so the
/// forest does not depend on the order trees are built in.
pub(crate) fn train_forest<T: Scalar>(x: &SparseMatrix<T>, y: &[usize], classes: usize, spec: &TrainSpec) -> Vec<Tree<T>> {
    let n = x.len();
    let width = classes + 1;
    let max_features = ((x.dim() as f64).sqrt().ceil() as usize).max(1);
    let params = GrowParams {
        max_depth: spec.max_depth,
        max_leaves: None,
        min_samples_leaf: spec.min_samples_leaf,
        max_features: Some(max_features),
        leaf_wise: false,
    };
    (0..spec.tree_count)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(t as u64);
            let mut weight = vec![0usize; n];
            if spec.bootstrap {
                for _ in 0..n {
                    weight[rng.random_range(0..n)] += 1;
                }
            } else {
                weight.iter_mut().for_each(|w| *w = 1);
            }
            let mut stats = vec![T::zero(); n * width];
            for (i, &w) in weight.iter().enumerate() {
                let w = T::from_count(w);
                stats[i * width] = w;
                stats[i * width + 1 + y[i]] = w;
            }
            let rows: Vec<usize> = (0..n).filter(|&i| weight[i] > 0).collect();
            grow(x, rows, &stats, Criterion::Gini { classes }, params, &mut rng)
        })
        .collect()
}
