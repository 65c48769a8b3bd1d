//! Binary decision trees over sparse rows.
//!
//! Each training row carries a fixed-width statistics vector (class weights
//! for Gini trees, hessian and gradient for Newton trees). Splits are found
//! by scanning a node's non-zero entries per feature, with the implicit
//! zeros forming one extra block.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{SparseMatrix, SparseVector};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum Node<T> {
    Leaf { value: Vec<T> },
    Split { feature: usize, threshold: T, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    pub fn leaf(&self, x: &SparseVector<T>) -> &[T] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x.get(*feature) <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Multiplies every leaf value by `factor`.
    pub(crate) fn scale_leaves(&mut self, factor: T) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                value.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Criterion<T> {
    /// Stats `[weight, w_0 .. w_{C-1}]`; leaves hold class frequencies.
    Gini { classes: usize },
    /// Stats `[hessian, gradient]`; leaves hold `-G / (H + λ)`.
    Newton { lambda: T },
}

impl<T: Scalar> Criterion<T> {
    pub(crate) fn width(&self) -> usize {
        match self {
            Criterion::Gini { classes } => classes + 1,
            Criterion::Newton { .. } => 2,
        }
    }

    /// Larger is purer; split gain is `score(L) + score(R) - score(parent)`.
    fn score(&self, s: &[T]) -> T {
        match self {
            Criterion::Gini { .. } => {
                if s[0] <= T::zero() {
                    T::zero()
                } else {
                    s[1..].iter().map(|&c| c * c).sum::<T>() / s[0]
                }
            }
            Criterion::Newton { lambda } => s[1] * s[1] / (s[0] + *lambda),
        }
    }

    fn leaf_value(&self, s: &[T]) -> Vec<T> {
        match self {
            Criterion::Gini { .. } => {
                if s[0] <= T::zero() {
                    let c = s.len() - 1;
                    vec![T::one() / T::from_count(c); c]
                } else {
                    s[1..].iter().map(|&c| c / s[0]).collect()
                }
            }
            Criterion::Newton { lambda } => vec![-s[1] / (s[0] + *lambda)],
        }
    }

    fn is_pure(&self, s: &[T]) -> bool {
        match self {
            Criterion::Gini { .. } => s[1..].iter().filter(|&&c| c > T::zero()).count() <= 1,
            Criterion::Newton { .. } => false,
        }
    }

    /// Gini trees accept zero-gain splits of impure nodes so that a single
    /// unrestricted tree can fit any consistent training set.
    fn accepts(&self, gain: T, parent: T) -> bool {
        let tol = T::lit(1e-10) * parent.abs().max(T::one());
        match self {
            Criterion::Gini { .. } => gain >= -tol,
            Criterion::Newton { .. } => gain > tol,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    pub max_leaves: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features examined per node (drawn at random among non-constant ones).
    pub max_features: Option<usize>,
    /// Best-first growth instead of breadth-first.
    pub leaf_wise: bool,
}

struct Candidate<T> {
    feature: usize,
    threshold: T,
    gain: T,
}

struct Pending<T> {
    node: usize,
    rows: Vec<usize>,
    depth: usize,
    split: Option<Candidate<T>>,
}

struct Grower<'a, T> {
    x: &'a SparseMatrix<T>,
    stats: &'a [T],
    crit: Criterion<T>,
    params: GrowParams,
    buckets: Vec<Vec<(T, usize)>>,
}

impl<'a, T: Scalar> Grower<'a, T> {
    fn row_stats(&self, r: usize) -> &[T] {
        let k = self.crit.width();
        &self.stats[r * k..(r + 1) * k]
    }

    fn sum_stats(&self, rows: &[usize]) -> Vec<T> {
        let mut s = vec![T::zero(); self.crit.width()];
        for &r in rows {
            s.iter_mut().zip(self.row_stats(r)).for_each(|(a, &b)| *a += b);
        }
        s
    }

    fn best_split(&mut self, rows: &[usize], total: &[T], rng: &mut ChaCha8Rng) -> Option<Candidate<T>> {
        if rows.len() < 2 * self.params.min_samples_leaf.max(1) || self.crit.is_pure(total) {
            return None;
        }
        let mut touched = Vec::new();
        for &r in rows {
            for (j, v) in self.x.row(r).iter() {
                if self.buckets[j].is_empty() {
                    touched.push(j);
                }
                self.buckets[j].push((v, r));
            }
        }
        touched.sort_unstable();
        let mut features: Vec<usize> = touched
            .iter()
            .copied()
            .filter(|&j| {
                let b = &self.buckets[j];
                b.len() < rows.len() || b.iter().any(|&(v, _)| v != b[0].0)
            })
            .collect();
        if self.params.max_features.is_some() {
            features.shuffle(rng);
        }
        let quota = self.params.max_features.unwrap_or(usize::MAX);
        let parent = self.crit.score(total);
        let mut best: Option<Candidate<T>> = None;
        for (seen, &j) in features.iter().enumerate() {
            // Past the quota, keep looking only until some valid split exists.
            if seen >= quota && best.is_some() {
                break;
            }
            let mut bucket = std::mem::take(&mut self.buckets[j]);
            if let Some(c) = self.scan_feature(j, &mut bucket, rows.len(), total, parent) {
                if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
            self.buckets[j] = bucket;
        }
        for j in touched {
            self.buckets[j].clear();
        }
        best
    }

    fn scan_feature(&self, feature: usize, bucket: &mut [(T, usize)], n: usize, total: &[T], parent: T) -> Option<Candidate<T>> {
        let k = self.crit.width();
        bucket.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features").then(a.1.cmp(&b.1)));
        let zeros = n - bucket.len();
        let mut zero_stats = total.to_vec();
        for &(_, r) in bucket.iter() {
            zero_stats.iter_mut().zip(self.row_stats(r)).for_each(|(a, &b)| *a -= b);
        }
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut left = vec![T::zero(); k];
        let mut right = vec![T::zero(); k];
        let mut left_n = 0;
        let mut zeros_done = zeros == 0;
        let mut best: Option<Candidate<T>> = None;
        let mut i = 0;
        // Walk the distinct values in order; the zero block sits between
        // negative and positive entries.
        loop {
            let next_value = if !zeros_done && (i >= bucket.len() || bucket[i].0 > T::zero()) {
                zeros_done = true;
                left.iter_mut().zip(&zero_stats).for_each(|(a, &b)| *a += b);
                left_n += zeros;
                T::zero()
            } else if i < bucket.len() {
                let v = bucket[i].0;
                while i < bucket.len() && bucket[i].0 == v {
                    left.iter_mut().zip(self.row_stats(bucket[i].1)).for_each(|(a, &b)| *a += b);
                    left_n += 1;
                    i += 1;
                }
                v
            } else {
                break;
            };
            let upcoming = if !zeros_done && (i >= bucket.len() || bucket[i].0 > T::zero()) {
                Some(T::zero())
            } else {
                bucket.get(i).map(|e| e.0)
            };
            let Some(upper) = upcoming else { break };
            if left_n < min_leaf || n - left_n < min_leaf {
                continue;
            }
            right.iter_mut().zip(total.iter().zip(&left)).for_each(|(r, (&t, &l))| *r = t - l);
            let gain = self.crit.score(&left) + self.crit.score(&right) - parent;
            if !self.crit.accepts(gain, parent) {
                continue;
            }
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let threshold = next_value + (upper - next_value) / T::lit(2.0);
                best = Some(Candidate { feature, threshold, gain });
            }
        }
        best
    }
}

/// Grows one tree on `rows`; `stats` is row-major with `crit.width()` columns.
pub(crate) fn grow<T: Scalar>(
    x: &SparseMatrix<T>,
    rows: Vec<usize>,
    stats: &[T],
    crit: Criterion<T>,
    params: GrowParams,
    rng: &mut ChaCha8Rng,
) -> Tree<T> {
    let mut g = Grower { x, stats, crit, params, buckets: vec![Vec::new(); x.dim()] };
    let mut nodes = vec![Node::Leaf { value: Vec::new() }];
    let mut leaves = 1usize;
    let mut open: VecDeque<Pending<T>> = VecDeque::new();

    let mut prepare = |g: &mut Grower<'_, T>, node: usize, rows: Vec<usize>, depth: usize, nodes: &mut Vec<Node<T>>| {
        let total = g.sum_stats(&rows);
        nodes[node] = Node::Leaf { value: g.crit.leaf_value(&total) };
        let depth_ok = g.params.max_depth.is_none_or(|d| depth < d);
        let split = if depth_ok { g.best_split(&rows, &total, rng) } else { None };
        Pending { node, rows, depth, split }
    };

    let root = prepare(&mut g, 0, rows, 0, &mut nodes);
    open.push_back(root);
    while !open.is_empty() {
        if params.max_leaves.is_some_and(|m| leaves >= m) {
            break;
        }
        let pick = if params.leaf_wise {
            let mut best: Option<usize> = None;
            for (i, p) in open.iter().enumerate() {
                if let Some(c) = &p.split {
                    if best.is_none_or(|b| c.gain > open[b].split.as_ref().unwrap().gain) {
                        best = Some(i);
                    }
                }
            }
            match best {
                Some(i) => i,
                None => break,
            }
        } else {
            0
        };
        let p = open.remove(pick).expect("index in range");
        let Some(c) = p.split else { continue };
        let (l_rows, r_rows): (Vec<usize>, Vec<usize>) =
            p.rows.iter().partition(|&&r| x.row(r).get(c.feature) <= c.threshold);
        let (l, r) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { value: Vec::new() });
        nodes.push(Node::Leaf { value: Vec::new() });
        nodes[p.node] = Node::Split { feature: c.feature, threshold: c.threshold, left: l, right: r };
        leaves += 1;
        let lp = prepare(&mut g, l, l_rows, p.depth + 1, &mut nodes);
        let rp = prepare(&mut g, r, r_rows, p.depth + 1, &mut nodes);
        open.push_back(lp);
        open.push_back(rp);
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn gini_stats(y: &[usize], classes: usize) -> Vec<f64> {
        y.iter()
            .flat_map(|&l| {
                let mut s = vec![0.0; classes + 1];
                s[0] = 1.0;
                s[l + 1] = 1.0;
                s
            })
            .collect()
    }

    fn full() -> GrowParams {
        GrowParams { max_depth: None, max_leaves: None, min_samples_leaf: 1, max_features: None, leaf_wise: false }
    }

    #[test]
    fn memorises_xor() {
        let data = [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let x = SparseMatrix::from_dense(&data, 4, 2).unwrap();
        let y = [0, 1, 1, 0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = grow(&x, (0..4).collect(), &gini_stats(&y, 2), Criterion::Gini { classes: 2 }, full(), &mut rng);
        for (i, &l) in y.iter().enumerate() {
            assert_eq!(t.leaf(x.row(i))[l], 1.0);
        }
    }

    #[test]
    fn negative_values_and_zero_block() {
        let data = [-2.0, -1.0, 0.0, 0.0, 1.0, 3.0];
        let x = SparseMatrix::from_dense(&data, 6, 1).unwrap();
        let y = [0, 0, 1, 1, 2, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = grow(&x, (0..6).collect(), &gini_stats(&y, 3), Criterion::Gini { classes: 3 }, full(), &mut rng);
        for (i, &l) in y.iter().enumerate() {
            assert_eq!(t.leaf(x.row(i))[l], 1.0, "row {i}");
        }
        assert_eq!(t.leaf_count(), 3);
    }

    #[test]
    fn limits_are_respected() {
        let data: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let x = SparseMatrix::from_dense(&data, 64, 1).unwrap();
        let y: Vec<usize> = (0..64).map(|i| i % 2).collect();
        let stats = gini_stats(&y, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let crit = Criterion::Gini { classes: 2 };
        let t = grow(&x, (0..64).collect(), &stats, crit, GrowParams { max_depth: Some(3), ..full() }, &mut rng);
        assert!(t.depth() <= 3);
        let p = GrowParams { max_leaves: Some(7), leaf_wise: true, ..full() };
        assert_eq!(grow(&x, (0..64).collect(), &stats, crit, p, &mut rng).leaf_count(), 7);
        let p = GrowParams { min_samples_leaf: 10, ..full() };
        let t = grow(&x, (0..64).collect(), &stats, crit, p, &mut rng);
        assert!(t.leaf_count() <= 6);
    }

    #[test]
    fn newton_leaves() {
        // two groups with gradients of opposite sign
        let data = [0.0, 0.0, 1.0, 1.0];
        let x = SparseMatrix::from_dense(&data, 4, 1).unwrap();
        let stats = [1.0, 0.5, 1.0, 0.5, 1.0, -0.5, 1.0, -0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = grow(&x, (0..4).collect(), &stats, Criterion::Newton { lambda: 1.0 }, full(), &mut rng);
        assert_eq!(t.leaf(x.row(0)), &[-1.0 / 3.0]);
        assert_eq!(t.leaf(x.row(3)), &[1.0 / 3.0]);
    }
}
