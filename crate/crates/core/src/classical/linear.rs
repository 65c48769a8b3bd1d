//! Linear SGD learners over sparse rows: averaged hinge SGD, softmax
//! regression and passive-aggressive updates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainSpec;
use crate::features::{SparseMatrix, SparseVector};
use crate::linalg::sigmoid;
use crate::scalar::Scalar;

/// `w = scale * v`, so L2 shrinkage costs O(1) per step.
///
/// With averaging on, the running sum of all iterates is kept lazily:
/// a coordinate is synced against the prefix sum of scales only when it
/// changes.
#[derive(Clone, Debug)]
pub(crate) struct SgdWeights<T> {
    v: Vec<T>,
    scale: T,
    bias: T,
    avg: Option<Averager<T>>,
}

#[derive(Clone, Debug)]
struct Averager<T> {
    acc: Vec<T>,
    last: Vec<T>,
    prefix: T,
    bias_sum: T,
    steps: usize,
}

impl<T: Scalar> SgdWeights<T> {
    pub(crate) fn new(dim: usize, averaged: bool) -> Self {
        SgdWeights {
            v: vec![T::zero(); dim],
            scale: T::one(),
            bias: T::zero(),
            avg: averaged.then(|| Averager {
                acc: vec![T::zero(); dim],
                last: vec![T::zero(); dim],
                prefix: T::zero(),
                bias_sum: T::zero(),
                steps: 0,
            }),
        }
    }

    pub(crate) fn margin(&self, x: &SparseVector<T>) -> T {
        x.dot_dense(&self.v) * self.scale + self.bias
    }

    /// Multiplies the weights (not the bias) by `factor`.
    pub(crate) fn shrink(&mut self, factor: T) {
        self.scale *= factor;
        if self.scale < T::lit(1e-6) {
            self.flush_average();
            let s = self.scale;
            self.v.iter_mut().for_each(|x| *x *= s);
            self.scale = T::one();
        }
    }

    /// `w += coef * x`, `b += bias_coef`.
    pub(crate) fn add(&mut self, x: &SparseVector<T>, coef: T, bias_coef: T) {
        let step = coef / self.scale;
        for (j, xj) in x.iter() {
            if let Some(a) = &mut self.avg {
                a.acc[j] += self.v[j] * (a.prefix - a.last[j]);
                a.last[j] = a.prefix;
            }
            self.v[j] += step * xj;
        }
        self.bias += bias_coef;
    }

    /// Marks the end of one SGD step for averaging purposes.
    pub(crate) fn end_step(&mut self) {
        if let Some(a) = &mut self.avg {
            a.prefix += self.scale;
            a.bias_sum += self.bias;
            a.steps += 1;
        }
    }

    fn flush_average(&mut self) {
        if let Some(a) = &mut self.avg {
            for j in 0..self.v.len() {
                a.acc[j] += self.v[j] * (a.prefix - a.last[j]);
                a.last[j] = a.prefix;
            }
        }
    }

    /// Final weights and bias; the iterate average when averaging is on.
    pub(crate) fn finish(mut self) -> (Vec<T>, T) {
        self.flush_average();
        match self.avg {
            Some(a) if a.steps > 0 => {
                let n = T::from_count(a.steps);
                (a.acc.into_iter().map(|x| x / n).collect(), a.bias_sum / n)
            }
            _ => {
                let s = self.scale;
                (self.v.into_iter().map(|x| x * s).collect(), self.bias)
            }
        }
    }
}

/// One-vs-rest targets: a single ±1 problem for C = 2, else one per class.
fn ovr_targets(classes: usize) -> usize {
    if classes == 2 {
        1
    } else {
        classes
    }
}

fn sign_for<T: Scalar>(y: usize, k: usize, heads: usize) -> T {
    let positive = if heads == 1 { y == 1 } else { y == k };
    if positive {
        T::one()
    } else {
        -T::one()
    }
}

fn epoch_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// `η_t = η₀ / (1 + η₀ λ t)` over SGD steps `t`.
fn step_rate<T: Scalar>(spec: &TrainSpec, t: usize) -> T {
    let eta0 = T::lit(spec.learning_rate);
    eta0 / (T::one() + eta0 * T::lit(spec.l2.max(1e-4)) * T::from_count(t))
}

fn stack_heads<T: Scalar>(heads: Vec<SgdWeights<T>>) -> (Vec<T>, Vec<T>) {
    let mut w = Vec::new();
    let mut b = Vec::new();
    for h in heads {
        let (hw, hb) = h.finish();
        w.extend(hw);
        b.push(hb);
    }
    (w, b)
}

/// Averaged SGD on the L2-regularized hinge loss.
pub(crate) fn train_lsvm<T: Scalar>(x: &SparseMatrix<T>, y: &[usize], classes: usize, spec: &TrainSpec) -> (Vec<T>, Vec<T>) {
    let heads_n = ovr_targets(classes);
    let mut heads: Vec<SgdWeights<T>> = (0..heads_n).map(|_| SgdWeights::new(x.dim(), true)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let l2 = T::lit(spec.l2);
    let mut t = 0;
    for _ in 0..spec.epochs {
        for i in epoch_order(x.len(), &mut rng) {
            let eta: T = step_rate(spec, t);
            t += 1;
            let xi = x.row(i);
            for (k, h) in heads.iter_mut().enumerate() {
                let s: T = sign_for(y[i], k, heads_n);
                let violated = s * h.margin(xi) < T::one();
                h.shrink(T::one() - eta * l2);
                if violated {
                    h.add(xi, eta * s, eta * s);
                }
                h.end_step();
            }
        }
    }
    stack_heads(heads)
}

/// Passive-aggressive updates: `τ = loss / (‖x‖² + 1)` on margin violations,
/// the `+ 1` accounting for the bias input.
pub(crate) fn train_pac<T: Scalar>(x: &SparseMatrix<T>, y: &[usize], classes: usize, spec: &TrainSpec) -> (Vec<T>, Vec<T>) {
    let heads_n = ovr_targets(classes);
    let mut heads: Vec<SgdWeights<T>> = (0..heads_n).map(|_| SgdWeights::new(x.dim(), false)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..spec.epochs {
        for i in epoch_order(x.len(), &mut rng) {
            let xi = x.row(i);
            for (k, h) in heads.iter_mut().enumerate() {
                let s: T = sign_for(y[i], k, heads_n);
                pa_update(h, xi, s);
            }
        }
    }
    stack_heads(heads)
}

pub(crate) fn pa_update<T: Scalar>(h: &mut SgdWeights<T>, x: &SparseVector<T>, s: T) {
    let loss = T::one() - s * h.margin(x);
    if loss > T::zero() {
        let tau = loss / (x.squared_norm() + T::one());
        h.add(x, tau * s, tau * s);
    }
}

/// Softmax regression by SGD; binary problems use one logistic head.
pub(crate) fn train_lr<T: Scalar>(x: &SparseMatrix<T>, y: &[usize], classes: usize, spec: &TrainSpec) -> (Vec<T>, Vec<T>) {
    let heads_n = ovr_targets(classes);
    let mut heads: Vec<SgdWeights<T>> = (0..heads_n).map(|_| SgdWeights::new(x.dim(), false)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let l2 = T::lit(spec.l2);
    let mut probs = vec![T::zero(); classes];
    let mut t = 0;
    for _ in 0..spec.epochs {
        for i in epoch_order(x.len(), &mut rng) {
            let eta: T = step_rate(spec, t);
            t += 1;
            let xi = x.row(i);
            let scores: Vec<T> = heads.iter().map(|h| h.margin(xi)).collect();
            linear_proba(&scores, &mut probs);
            for (k, h) in heads.iter_mut().enumerate() {
                // d loss / d score_k
                let g = if heads_n == 1 {
                    probs[1] - if y[i] == 1 { T::one() } else { T::zero() }
                } else {
                    probs[k] - if y[i] == k { T::one() } else { T::zero() }
                };
                h.shrink(T::one() - eta * l2);
                h.add(xi, -eta * g, -eta * g);
            }
        }
    }
    stack_heads(heads)
}

/// Scores → probabilities. One score means a binary logistic head.
pub(crate) fn linear_proba<T: Scalar>(scores: &[T], out: &mut [T]) {
    if scores.len() == 1 {
        let p = sigmoid(scores[0]);
        out[0] = T::one() - p;
        out[1] = p;
    } else {
        out.copy_from_slice(scores);
        crate::linalg::softmax_in_place(out);
    }
}

/// Mean cross-entropy of a linear softmax (or logistic) model plus
/// `l2/2 ‖W‖²`, with its exact gradient.
///
/// `w` is heads×D row-major, `b` has one entry per head.
pub fn lr_loss_and_grad<T: Scalar>(
    w: &[T],
    b: &[T],
    x: &SparseMatrix<T>,
    y: &[usize],
    classes: usize,
    l2: T,
) -> (T, Vec<T>, Vec<T>) {
    let heads = b.len();
    let d = x.dim();
    let n = T::from_count(x.len());
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); heads];
    let mut probs = vec![T::zero(); classes];
    let mut loss = T::zero();
    for (i, xi) in x.rows().iter().enumerate() {
        let scores: Vec<T> = (0..heads).map(|k| xi.dot_dense(&w[k * d..(k + 1) * d]) + b[k]).collect();
        linear_proba(&scores, &mut probs);
        loss -= probs[y[i]].max(T::min_positive_value()).ln();
        for k in 0..heads {
            let g = if heads == 1 {
                probs[1] - if y[i] == 1 { T::one() } else { T::zero() }
            } else {
                probs[k] - if y[i] == k { T::one() } else { T::zero() }
            } / n;
            for (j, v) in xi.iter() {
                gw[k * d + j] += g * v;
            }
            gb[k] += g;
        }
    }
    loss /= n;
    let half = T::lit(0.5);
    for (g, &wi) in gw.iter_mut().zip(w) {
        loss += half * l2 * wi * wi;
        *g += l2 * wi;
    }
    (loss, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn lazy_average_matches_dense_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 6;
        let mut lazy = SgdWeights::<f64>::new(dim, true);
        let mut dense = vec![0.0; dim];
        let mut bias = 0.0;
        let mut sum = vec![0.0; dim];
        let mut bias_sum = 0.0;
        let steps = 400;
        for _ in 0..steps {
            let factor = 1.0 - rng.random_range(0.0..0.2);
            lazy.shrink(factor);
            dense.iter_mut().for_each(|w| *w *= factor);
            let mut pairs = Vec::new();
            for j in 0..dim {
                if rng.random_bool(0.4) {
                    pairs.push((j, rng.random_range(-1.0..1.0)));
                }
            }
            let x = SparseVector::from_pairs(pairs);
            let c = rng.random_range(-1.0..1.0);
            lazy.add(&x, c, c);
            for (j, v) in x.iter() {
                dense[j] += c * v;
            }
            bias += c;
            lazy.end_step();
            sum.iter_mut().zip(&dense).for_each(|(s, w)| *s += w);
            bias_sum += bias;
        }
        let (w, b) = lazy.finish();
        for (a, s) in w.iter().zip(&sum) {
            assert!((a - s / steps as f64).abs() < 1e-9, "{a} vs {}", s / steps as f64);
        }
        assert!((b - bias_sum / steps as f64).abs() < 1e-12);
    }

    #[test]
    fn pa_leaves_satisfied_points_alone() {
        let mut h = SgdWeights::<f64>::new(2, false);
        let x = SparseVector::from_dense(&[1.0, 0.0]);
        h.add(&x, 3.0, 0.0);
        let before = h.clone().finish();
        pa_update(&mut h, &x, 1.0);
        assert_eq!(h.finish(), before);
    }
}
