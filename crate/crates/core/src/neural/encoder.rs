//! Batched pre-norm encoder forward and backward passes over a flat
//! parameter vector. Activations for a batch are `(N·L) × H` row-major.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{InputKind, Layout, TransformerConfig};
use crate::linalg::{gemm, softmax_in_place, View, ViewMut};
use crate::scalar::Scalar;
use crate::tokenizer::TokenSequence;

pub(crate) const LN_EPS: f64 = 1e-5;

/// Encoder input for a batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Inputs<T> {
    Tokens(Vec<TokenSequence>),
    /// `rows × blocks × block_dim` values; every block is a real position.
    Dense { rows: usize, values: Vec<T> },
}

impl<T: Scalar> Inputs<T> {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Tokens(s) => s.len(),
            Inputs::Dense { rows, .. } => *rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            Inputs::Tokens(s) => Inputs::Tokens(idx.iter().map(|&i| s[i].clone()).collect()),
            Inputs::Dense { rows, values } => {
                let width = values.len() / (*rows).max(1);
                let mut out = Vec::with_capacity(idx.len() * width);
                for &i in idx {
                    out.extend_from_slice(&values[i * width..(i + 1) * width]);
                }
                Inputs::Dense { rows: idx.len(), values: out }
            }
        }
    }

    /// Validity of each of the `N·L` positions.
    pub(crate) fn mask(&self, l: usize) -> Vec<bool> {
        match self {
            Inputs::Tokens(s) => s.iter().flat_map(|t| t.attention_mask.iter().map(|&m| m == 1)).collect(),
            Inputs::Dense { rows, .. } => vec![true; rows * l],
        }
    }
}

pub(crate) struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    p: Vec<T>,
    o: Vec<T>,
    drop_attn: Option<Vec<T>>,
    ln2: LnCache<T>,
    b: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
    drop_ffn: Option<Vec<T>>,
}

/// Everything the backward pass needs.
pub(crate) struct Cache<T> {
    pub n: usize,
    pub l: usize,
    pub mask: Vec<bool>,
    inputs: Inputs<T>,
    drop_embed: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    /// Final normalized states, `(N·L) × H`.
    pub z: Vec<T>,
}

impl<T: Scalar> Cache<T> {
    /// Attention probabilities of one layer: `N × heads × L × L`.
    pub fn attention(&self, layer: usize) -> &[T] {
        &self.layers[layer].p
    }
}

pub(crate) fn affine<T: Scalar>(x: &[T], m: usize, k: usize, w: &[T], b: &[T], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(b);
    }
    gemm(T::one(), View::dense(x, m, k), View::dense(w, k, n), T::one(), ViewMut::dense(&mut out, m, n));
    out
}

/// Accumulates `dW += xᵀ dy`, `db += Σ dy` and returns `dx = dy Wᵀ`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn affine_back<T: Scalar>(
    x: &[T],
    m: usize,
    k: usize,
    params: &[T],
    w_off: usize,
    b_off: usize,
    dy: &[T],
    n: usize,
    grad: &mut [T],
) -> Vec<T> {
    gemm(
        T::one(),
        View::dense(x, m, k).t(),
        View::dense(dy, m, n),
        T::one(),
        ViewMut::dense(&mut grad[w_off..w_off + k * n], k, n),
    );
    let db = &mut grad[b_off..b_off + n];
    for row in dy.chunks(n) {
        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
    }
    let mut dx = vec![T::zero(); m * k];
    gemm(
        T::one(),
        View::dense(dy, m, n),
        View::dense(&params[w_off..w_off + k * n], k, n).t(),
        T::zero(),
        ViewMut::dense(&mut dx, m, k),
    );
    dx
}

pub(crate) fn layer_norm<T: Scalar>(x: &[T], h: usize, g: &[T], b: &[T]) -> (Vec<T>, LnCache<T>) {
    let rows = x.len() / h;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let hn = T::from_count(h);
    for r in 0..rows {
        let row = &x[r * h..(r + 1) * h];
        let mean = row.iter().copied().sum::<T>() / hn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hn;
        let rs = T::one() / (var + T::lit(LN_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..h {
            let xh = (row[j] - mean) * rs;
            xhat[r * h + j] = xh;
            y[r * h + j] = xh * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_back<T: Scalar>(
    c: &LnCache<T>,
    h: usize,
    params: &[T],
    g_off: usize,
    b_off: usize,
    dy: &[T],
    grad: &mut [T],
) -> Vec<T> {
    let rows = c.rstd.len();
    let hn = T::from_count(h);
    let mut dx = vec![T::zero(); dy.len()];
    let g = &params[g_off..g_off + h];
    for r in 0..rows {
        let dyr = &dy[r * h..(r + 1) * h];
        let xh = &c.xhat[r * h..(r + 1) * h];
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for j in 0..h {
            grad[g_off + j] += dyr[j] * xh[j];
            grad[b_off + j] += dyr[j];
            let d = dyr[j] * g[j];
            sum_d += d;
            sum_dx += d * xh[j];
        }
        let (mean_d, mean_dx) = (sum_d / hn, sum_dx / hn);
        for j in 0..h {
            dx[r * h + j] = c.rstd[r] * (dyr[j] * g[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

/// tanh approximation of GELU.
pub(crate) fn gelu<T: Scalar>(u: T) -> T {
    let inner = T::lit(GELU_C) * (u + T::lit(GELU_A) * u * u * u);
    T::lit(0.5) * u * (T::one() + inner.tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let t = (c * (u + a * u * u * u)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * u * u)
}

fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = T::one() / T::lit(1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect()
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
    }
}

/// Runs the encoder. Dropout is active only when `rng` is given.
pub(crate) fn encode<T: Scalar>(
    cfg: &TransformerConfig,
    lay: &Layout,
    p: &[T],
    inputs: &Inputs<T>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Cache<T> {
    let (n, l, h) = (inputs.len(), cfg.max_len, cfg.hidden);
    let rows = n * l;
    let rate = cfg.dropout;
    let mut draw = |len: usize| -> Option<Vec<T>> {
        match (&mut rng, rate > 0.0) {
            (Some(r), true) => Some(dropout_mask(len, rate, r)),
            _ => None,
        }
    };
    let mask = inputs.mask(l);

    let mut x = vec![T::zero(); rows * h];
    match inputs {
        Inputs::Tokens(seqs) => {
            for (s, seq) in seqs.iter().enumerate() {
                for (t, &id) in seq.ids.iter().enumerate() {
                    let e = &p[lay.embed + id as usize * h..lay.embed + (id as usize + 1) * h];
                    let pos = &p[lay.pos + t * h..lay.pos + (t + 1) * h];
                    let out = &mut x[(s * l + t) * h..(s * l + t + 1) * h];
                    for j in 0..h {
                        out[j] = e[j] + pos[j];
                    }
                }
            }
        }
        Inputs::Dense { values, .. } => {
            let InputKind::Projected { block_dim, .. } = cfg.input else {
                unreachable!("dense inputs need a projected config")
            };
            for s in 0..n {
                for t in 0..l {
                    let w = &p[lay.embed + t * block_dim * h..lay.embed + (t + 1) * block_dim * h];
                    let v = &values[(s * l + t) * block_dim..(s * l + t + 1) * block_dim];
                    let out = &mut x[(s * l + t) * h..(s * l + t + 1) * h];
                    out.copy_from_slice(&p[lay.pos + t * h..lay.pos + (t + 1) * h]);
                    gemm(T::one(), View::dense(v, 1, block_dim), View::dense(w, block_dim, h), T::one(), ViewMut::dense(out, 1, h));
                }
            }
        }
    }
    let drop_embed = draw(rows * h);
    apply_mask(&mut x, &drop_embed);

    let (heads, hd, f) = (cfg.heads, cfg.head_dim(), cfg.ffn());
    let scale = T::one() / T::from_count(hd).sqrt();
    let mut layers = Vec::with_capacity(cfg.layers);
    for lo in &lay.layers {
        let (a, ln1) = layer_norm(&x, h, &p[lo.ln1_g..lo.ln1_g + h], &p[lo.ln1_b..lo.ln1_b + h]);
        let q = affine(&a, rows, h, &p[lo.wq..lo.wq + h * h], &p[lo.bq..lo.bq + h], h);
        let k = affine(&a, rows, h, &p[lo.wk..lo.wk + h * h], &p[lo.bk..lo.bk + h], h);
        let v = affine(&a, rows, h, &p[lo.wv..lo.wv + h * h], &p[lo.bv..lo.bv + h], h);
        let mut probs = vec![T::zero(); n * heads * l * l];
        let mut o = vec![T::zero(); rows * h];
        for s in 0..n {
            for hh in 0..heads {
                let pb = &mut probs[(s * heads + hh) * l * l..(s * heads + hh + 1) * l * l];
                gemm(
                    scale,
                    View::block(&q, h, s * l, l, hh * hd, hd),
                    View::block(&k, h, s * l, l, hh * hd, hd).t(),
                    T::zero(),
                    ViewMut::dense(pb, l, l),
                );
                for row in pb.chunks_mut(l) {
                    for (j, v) in row.iter_mut().enumerate() {
                        if !mask[s * l + j] {
                            *v = T::neg_infinity();
                        }
                    }
                    softmax_in_place(row);
                }
                gemm(
                    T::one(),
                    View::dense(pb, l, l),
                    View::block(&v, h, s * l, l, hh * hd, hd),
                    T::zero(),
                    ViewMut::block(&mut o, h, s * l, l, hh * hd, hd),
                );
            }
        }
        let mut attn = affine(&o, rows, h, &p[lo.wo..lo.wo + h * h], &p[lo.bo..lo.bo + h], h);
        let drop_attn = draw(rows * h);
        apply_mask(&mut attn, &drop_attn);
        x.iter_mut().zip(&attn).for_each(|(xi, &d)| *xi += d);

        let (b, ln2) = layer_norm(&x, h, &p[lo.ln2_g..lo.ln2_g + h], &p[lo.ln2_b..lo.ln2_b + h]);
        let u = affine(&b, rows, h, &p[lo.w1..lo.w1 + h * f], &p[lo.b1..lo.b1 + f], f);
        let g: Vec<T> = u.iter().map(|&v| gelu(v)).collect();
        let mut ffn = affine(&g, rows, f, &p[lo.w2..lo.w2 + f * h], &p[lo.b2..lo.b2 + h], h);
        let drop_ffn = draw(rows * h);
        apply_mask(&mut ffn, &drop_ffn);
        x.iter_mut().zip(&ffn).for_each(|(xi, &d)| *xi += d);

        layers.push(LayerCache { ln1, a, q, k, v, p: probs, o, drop_attn, ln2, b, u, g, drop_ffn });
    }
    let (z, lnf) = layer_norm(&x, h, &p[lay.lnf_g..lay.lnf_g + h], &p[lay.lnf_b..lay.lnf_b + h]);
    Cache { n, l, mask, inputs: inputs.clone(), drop_embed, layers, lnf, z }
}

/// Backpropagates `dz` (gradient w.r.t. the final states) into `grad`.
pub(crate) fn encode_backward<T: Scalar>(
    cfg: &TransformerConfig,
    lay: &Layout,
    p: &[T],
    cache: &Cache<T>,
    dz: &[T],
    grad: &mut [T],
) {
    let (n, l, h) = (cache.n, cache.l, cfg.hidden);
    let rows = n * l;
    let (heads, hd, f) = (cfg.heads, cfg.head_dim(), cfg.ffn());
    let scale = T::one() / T::from_count(hd).sqrt();

    let mut dx = layer_norm_back(&cache.lnf, h, p, lay.lnf_g, lay.lnf_b, dz, grad);
    for (lo, c) in lay.layers.iter().zip(&cache.layers).rev() {
        // FFN branch
        let mut df = dx.clone();
        apply_mask(&mut df, &c.drop_ffn);
        let dg = affine_back(&c.g, rows, f, p, lo.w2, lo.b2, &df, h, grad);
        let du: Vec<T> = dg.iter().zip(&c.u).map(|(&d, &u)| d * gelu_grad(u)).collect();
        let db = affine_back(&c.b, rows, h, p, lo.w1, lo.b1, &du, f, grad);
        let dln2 = layer_norm_back(&c.ln2, h, p, lo.ln2_g, lo.ln2_b, &db, grad);
        dx.iter_mut().zip(&dln2).for_each(|(a, &b)| *a += b);

        // attention branch
        let mut dattn = dx.clone();
        apply_mask(&mut dattn, &c.drop_attn);
        let d_o = affine_back(&c.o, rows, h, p, lo.wo, lo.bo, &dattn, h, grad);
        let mut dq = vec![T::zero(); rows * h];
        let mut dk = vec![T::zero(); rows * h];
        let mut dv = vec![T::zero(); rows * h];
        let mut dp = vec![T::zero(); l * l];
        for s in 0..n {
            for hh in 0..heads {
                let pb = &c.p[(s * heads + hh) * l * l..(s * heads + hh + 1) * l * l];
                gemm(
                    T::one(),
                    View::block(&d_o, h, s * l, l, hh * hd, hd),
                    View::block(&c.v, h, s * l, l, hh * hd, hd).t(),
                    T::zero(),
                    ViewMut::dense(&mut dp, l, l),
                );
                gemm(
                    T::one(),
                    View::dense(pb, l, l).t(),
                    View::block(&d_o, h, s * l, l, hh * hd, hd),
                    T::zero(),
                    ViewMut::block(&mut dv, h, s * l, l, hh * hd, hd),
                );
                // softmax backward, in place: dS = P ⊙ (dP − Σ dP⊙P)
                for (dr, pr) in dp.chunks_mut(l).zip(pb.chunks(l)) {
                    let dotp: T = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                    dr.iter_mut().zip(pr).for_each(|(d, &pv)| *d = pv * (*d - dotp));
                }
                gemm(
                    scale,
                    View::dense(&dp, l, l),
                    View::block(&c.k, h, s * l, l, hh * hd, hd),
                    T::zero(),
                    ViewMut::block(&mut dq, h, s * l, l, hh * hd, hd),
                );
                gemm(
                    scale,
                    View::dense(&dp, l, l).t(),
                    View::block(&c.q, h, s * l, l, hh * hd, hd),
                    T::zero(),
                    ViewMut::block(&mut dk, h, s * l, l, hh * hd, hd),
                );
            }
        }
        let mut da = affine_back(&c.a, rows, h, p, lo.wq, lo.bq, &dq, h, grad);
        for (w, b, d) in [(lo.wk, lo.bk, &dk), (lo.wv, lo.bv, &dv)] {
            let part = affine_back(&c.a, rows, h, p, w, b, d, h, grad);
            da.iter_mut().zip(&part).for_each(|(x, &y)| *x += y);
        }
        let dln1 = layer_norm_back(&c.ln1, h, p, lo.ln1_g, lo.ln1_b, &da, grad);
        dx.iter_mut().zip(&dln1).for_each(|(a, &b)| *a += b);
    }

    apply_mask(&mut dx, &cache.drop_embed);
    match &cache.inputs {
        Inputs::Tokens(seqs) => {
            for (s, seq) in seqs.iter().enumerate() {
                for (t, &id) in seq.ids.iter().enumerate() {
                    let d = &dx[(s * l + t) * h..(s * l + t + 1) * h];
                    let e = lay.embed + id as usize * h;
                    let ps = lay.pos + t * h;
                    for j in 0..h {
                        grad[e + j] += d[j];
                        grad[ps + j] += d[j];
                    }
                }
            }
        }
        Inputs::Dense { values, .. } => {
            let InputKind::Projected { block_dim, .. } = cfg.input else {
                unreachable!("dense inputs need a projected config")
            };
            for s in 0..n {
                for t in 0..l {
                    let d = &dx[(s * l + t) * h..(s * l + t + 1) * h];
                    let v = &values[(s * l + t) * block_dim..(s * l + t + 1) * block_dim];
                    let w = lay.embed + t * block_dim * h;
                    for (i, &vi) in v.iter().enumerate() {
                        for j in 0..h {
                            grad[w + i * h + j] += vi * d[j];
                        }
                    }
                    let ps = lay.pos + t * h;
                    for j in 0..h {
                        grad[ps + j] += d[j];
                    }
                }
            }
        }
    }
}
