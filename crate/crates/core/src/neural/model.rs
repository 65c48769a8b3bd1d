use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{GroupInit, InputKind, Layout, TransformerConfig};
use super::encoder::{encode, encode_backward, Cache, Inputs};
use crate::error::{Error, Result};
use crate::linalg::{gemm, log_sum_exp, sigmoid, softmax_in_place, softmax_t, View, ViewMut};
use crate::prob::ProbMatrix;
use crate::scalar::Scalar;

pub const INIT_STD: f64 = 0.02;

/// Training stage recorded in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initialized,
    Pretrained,
    Finetuned,
}

impl Phase {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Phase::Initialized => 0,
            Phase::Pretrained => 1,
            Phase::Finetuned => 2,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Phase::Initialized),
            1 => Ok(Phase::Pretrained),
            2 => Ok(Phase::Finetuned),
            other => Err(Error::Format(format!("unknown phase tag {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerModel<T> {
    pub(crate) config: TransformerConfig,
    pub(crate) layout: Layout,
    pub(crate) params: Vec<T>,
    pub(crate) phase: Phase,
}

/// Classification logits and first-position states.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    pub rows: usize,
    /// `rows × classes`
    pub logits: Vec<T>,
    /// `rows × hidden`
    pub pooled: Vec<T>,
}

/// What a batch is trained against.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Target<'a, T> {
    /// Sparse categorical cross-entropy on the classification head.
    Classes(&'a [usize]),
    /// Temperature-scaled KL to teacher logits plus a hard-label term.
    Distill { teacher_logits: &'a [T], labels: &'a [usize], temperature: T, soft: T, hard: T },
    /// Cross-entropy at `(flat position, original id)` pairs through the tied MLM head.
    Mlm(&'a [(usize, u32)]),
    /// Per-position replaced (1) / original (0) labels; padding is skipped.
    Rtd(&'a [u8]),
}

pub fn init_transformer<T: Scalar>(cfg: TransformerConfig, seed: u64) -> Result<TransformerModel<T>> {
    cfg.validate()?;
    let layout = Layout::new(&cfg);
    let mut params = vec![T::zero(); layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    for g in &layout.groups {
        let slot = &mut params[g.offset..g.offset + g.len];
        match g.init {
            GroupInit::Normal => slot.iter_mut().for_each(|v| *v = T::lit(normal.sample(&mut rng))),
            GroupInit::Ones => slot.iter_mut().for_each(|v| *v = T::one()),
            GroupInit::Zeros => {}
        }
    }
    Ok(TransformerModel { config: cfg, layout, params, phase: Phase::Initialized })
}

impl<T: Scalar> TransformerModel<T> {
    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Copies every parameter group whose name and size match `other`'s.
    /// Returns the number of groups copied.
    pub fn copy_matching_from(&mut self, other: &TransformerModel<T>) -> usize {
        let mut copied = 0;
        for g in &self.layout.groups {
            if let Some(src) = other.layout.group(&g.name).filter(|s| s.len == g.len) {
                self.params[g.offset..g.offset + g.len].copy_from_slice(&other.params[src.offset..src.offset + src.len]);
                copied += 1;
            }
        }
        copied
    }

    /// Replaces the classification head with a freshly initialized one for `classes`.
    pub fn with_head(&self, classes: usize, seed: u64) -> Result<Self> {
        let cfg = self.config.clone().with_classes(classes);
        let mut fresh: TransformerModel<T> = init_transformer(cfg, seed)?;
        for g in self.layout.groups.iter().filter(|g| !g.name.starts_with("head_")) {
            let dst = fresh.layout.group(&g.name).expect("same layout").offset;
            fresh.params[dst..dst + g.len].copy_from_slice(&self.params[g.offset..g.offset + g.len]);
        }
        fresh.phase = self.phase;
        Ok(fresh)
    }

    pub(crate) fn check_inputs(&self, inputs: &Inputs<T>) -> Result<()> {
        let l = self.config.max_len;
        match (inputs, self.config.input) {
            (Inputs::Tokens(seqs), InputKind::Tokens) => {
                for (i, s) in seqs.iter().enumerate() {
                    if s.ids.len() != l || s.attention_mask.len() != l {
                        return Err(Error::shape(format!("sequence {i} has length {}, model expects {l}", s.ids.len())));
                    }
                    if s.attention_mask.first() != Some(&1) {
                        return Err(Error::shape(format!("sequence {i} has no real first position")));
                    }
                    if let Some(&bad) = s.ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
                        return Err(Error::InvalidTokenId(bad));
                    }
                }
                Ok(())
            }
            (Inputs::Dense { rows, values }, InputKind::Projected { blocks, block_dim }) => {
                if values.len() != rows * blocks * block_dim {
                    return Err(Error::shape(format!("{} dense values for {rows} rows of {blocks}x{block_dim}", values.len())));
                }
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { row: i / (blocks * block_dim) });
                }
                Ok(())
            }
            _ => Err(Error::shape("input kind does not match the model")),
        }
    }

    pub(crate) fn encode(&self, inputs: &Inputs<T>, rng: Option<&mut ChaCha8Rng>) -> Cache<T> {
        encode(&self.config, &self.layout, &self.params, inputs, rng)
    }

    fn pooled(&self, cache: &Cache<T>) -> Vec<T> {
        let h = self.config.hidden;
        (0..cache.n).flat_map(|s| cache.z[s * cache.l * h..(s * cache.l + 1) * h].iter().copied()).collect()
    }

    fn head_logits(&self, pooled: &[T], rows: usize) -> Vec<T> {
        let (h, c) = (self.config.hidden, self.config.classes);
        let lay = &self.layout;
        super::encoder::affine(pooled, rows, h, &self.params[lay.head_w..lay.head_w + h * c], &self.params[lay.head_b..lay.head_b + c], c)
    }

    pub fn forward(&self, inputs: &Inputs<T>) -> Result<ForwardOutput<T>> {
        self.check_inputs(inputs)?;
        let cache = self.encode(inputs, None);
        let pooled = self.pooled(&cache);
        let logits = self.head_logits(&pooled, cache.n);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch: 0 });
        }
        Ok(ForwardOutput { rows: cache.n, logits, pooled })
    }

    /// Attention probabilities of `layer`, `N × heads × L × L`.
    pub fn attention_probs(&self, inputs: &Inputs<T>, layer: usize) -> Result<Vec<T>> {
        self.check_inputs(inputs)?;
        Ok(self.encode(inputs, None).attention(layer).to_vec())
    }

    pub fn predict_proba(&self, inputs: &Inputs<T>) -> Result<ProbMatrix<T>> {
        let out = self.forward(inputs)?;
        ProbMatrix::from_scores(out.rows, self.config.classes, out.logits)
    }

    pub fn predict(&self, inputs: &Inputs<T>) -> Result<Vec<usize>> {
        Ok(self.predict_proba(inputs)?.predict())
    }

    /// Masked-language-model logits (`positions.len() × V`) through the tied head.
    pub fn mlm_logits(&self, inputs: &Inputs<T>, positions: &[usize]) -> Result<Vec<T>> {
        self.check_inputs(inputs)?;
        let cache = self.encode(inputs, None);
        Ok(self.mlm_forward(&cache, positions).1)
    }

    fn mlm_forward(&self, cache: &Cache<T>, positions: &[usize]) -> (Vec<T>, Vec<T>) {
        let (h, v) = (self.config.hidden, self.config.vocab_size);
        let lay = &self.layout;
        let m = positions.len();
        let mut zsel = Vec::with_capacity(m * h);
        for &r in positions {
            zsel.extend_from_slice(&cache.z[r * h..(r + 1) * h]);
        }
        let mut logits = Vec::with_capacity(m * v);
        for _ in 0..m {
            logits.extend_from_slice(&self.params[lay.mlm_b..lay.mlm_b + v]);
        }
        gemm(
            T::one(),
            View::dense(&zsel, m, h),
            View::dense(&self.params[lay.embed..lay.embed + v * h], v, h).t(),
            T::one(),
            ViewMut::dense(&mut logits, m, v),
        );
        (zsel, logits)
    }

    /// Replaced-token logits for every position (`N·L`).
    pub fn rtd_logits(&self, inputs: &Inputs<T>) -> Result<Vec<T>> {
        self.check_inputs(inputs)?;
        let cache = self.encode(inputs, None);
        Ok(self.rtd_forward(&cache))
    }

    fn rtd_forward(&self, cache: &Cache<T>) -> Vec<T> {
        let h = self.config.hidden;
        let lay = &self.layout;
        let w = &self.params[lay.rtd_w..lay.rtd_w + h];
        let b = self.params[lay.rtd_b];
        cache.z.chunks(h).map(|z| crate::linalg::dot(z, w) + b).collect()
    }

    /// Mean loss and full gradient for one batch. Dropout is applied when
    /// `rng` is given.
    pub(crate) fn loss_and_grad(&self, inputs: &Inputs<T>, target: Target<'_, T>, rng: Option<&mut ChaCha8Rng>) -> Result<(T, Vec<T>)> {
        let cache = self.encode(inputs, rng);
        let (h, c) = (self.config.hidden, self.config.classes);
        let lay = &self.layout;
        let mut grad = vec![T::zero(); self.params.len()];
        let mut dz = vec![T::zero(); cache.z.len()];
        let n = cache.n;
        let loss = match target {
            Target::Classes(_) | Target::Distill { .. } => {
                let pooled = self.pooled(&cache);
                let logits = self.head_logits(&pooled, n);
                let (loss, dlogits) = match target {
                    Target::Classes(labels) => classification_loss(&logits, labels, c)?,
                    Target::Distill { teacher_logits, labels, temperature, soft, hard } => {
                        let d = distill_terms(teacher_logits, &logits, labels, c, temperature, soft, hard)?;
                        (d.total, d.dlogits)
                    }
                    _ => unreachable!(),
                };
                let dpooled = super::encoder::affine_back(&pooled, n, h, &self.params, lay.head_w, lay.head_b, &dlogits, c, &mut grad);
                for s in 0..n {
                    let r = s * cache.l;
                    dz[r * h..(r + 1) * h].copy_from_slice(&dpooled[s * h..(s + 1) * h]);
                }
                loss
            }
            Target::Mlm(pairs) => {
                if pairs.is_empty() {
                    return Err(Error::NoMaskedPositions);
                }
                let v = self.config.vocab_size;
                let positions: Vec<usize> = pairs.iter().map(|&(r, _)| r).collect();
                let (zsel, mut logits) = self.mlm_forward(&cache, &positions);
                let m = pairs.len();
                let mn = T::from_count(m);
                let mut loss = T::zero();
                for (row, &(_, id)) in logits.chunks_mut(v).zip(pairs) {
                    loss += log_sum_exp(row) - row[id as usize];
                    softmax_in_place(row);
                    row[id as usize] -= T::one();
                    row.iter_mut().for_each(|x| *x /= mn);
                }
                // tied embedding: logits = Z Eᵀ + b
                gemm(
                    T::one(),
                    View::dense(&logits, m, v).t(),
                    View::dense(&zsel, m, h),
                    T::one(),
                    ViewMut::dense(&mut grad[lay.embed..lay.embed + v * h], v, h),
                );
                for row in logits.chunks(v) {
                    grad[lay.mlm_b..lay.mlm_b + v].iter_mut().zip(row).for_each(|(g, &d)| *g += d);
                }
                let mut dsel = vec![T::zero(); m * h];
                gemm(
                    T::one(),
                    View::dense(&logits, m, v),
                    View::dense(&self.params[lay.embed..lay.embed + v * h], v, h),
                    T::zero(),
                    ViewMut::dense(&mut dsel, m, h),
                );
                for (k, &r) in positions.iter().enumerate() {
                    dz[r * h..(r + 1) * h].iter_mut().zip(&dsel[k * h..(k + 1) * h]).for_each(|(a, &b)| *a += b);
                }
                loss / mn
            }
            Target::Rtd(labels) => {
                if labels.len() != cache.z.len() / h {
                    return Err(Error::shape("one replaced-token label per position is required"));
                }
                let logits = self.rtd_forward(&cache);
                let valid: Vec<usize> = (0..logits.len()).filter(|&r| cache.mask[r]).collect();
                let vn = T::from_count(valid.len().max(1));
                let mut loss = T::zero();
                let w = &self.params[lay.rtd_w..lay.rtd_w + h];
                for &r in &valid {
                    let y = if labels[r] != 0 { T::one() } else { T::zero() };
                    let x = logits[r];
                    // stable BCE with logits
                    loss += x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln();
                    let d = (sigmoid(x) - y) / vn;
                    for j in 0..h {
                        grad[lay.rtd_w + j] += d * cache.z[r * h + j];
                        dz[r * h + j] += d * w[j];
                    }
                    grad[lay.rtd_b] += d;
                }
                loss / vn
            }
        };
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch: 0 });
        }
        encode_backward(&self.config, &self.layout, &self.params, &cache, &dz, &mut grad);
        Ok((loss, grad))
    }

    /// Mean classification loss and gradient without dropout.
    pub fn classification_loss_and_grad(&self, inputs: &Inputs<T>, labels: &[usize]) -> Result<(T, Vec<T>)> {
        self.check_inputs(inputs)?;
        self.loss_and_grad(inputs, Target::Classes(labels), None)
    }
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub(crate) fn classification_loss<T: Scalar>(logits: &[T], labels: &[usize], c: usize) -> Result<(T, Vec<T>)> {
    let n = logits.len() / c;
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
    }
    let nn = T::from_count(n);
    let mut d = logits.to_vec();
    let mut loss = T::zero();
    for (row, &y) in d.chunks_mut(c).zip(labels) {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        loss += log_sum_exp(row) - row[y];
        softmax_in_place(row);
        row[y] -= T::one();
        row.iter_mut().for_each(|x| *x /= nn);
    }
    Ok((loss / nn, d))
}

/// Distillation objective terms for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillTerms<T> {
    pub total: T,
    /// Mean `KL(teacher_T ‖ student_T)`, unscaled.
    pub kl: T,
    /// Mean hard-label cross-entropy at temperature 1.
    pub hard: T,
    pub dlogits: Vec<T>,
}

pub(crate) fn distill_terms<T: Scalar>(
    teacher_logits: &[T],
    student_logits: &[T],
    labels: &[usize],
    c: usize,
    temperature: T,
    soft: T,
    hard: T,
) -> Result<DistillTerms<T>> {
    if teacher_logits.len() != student_logits.len() || student_logits.len() != labels.len() * c {
        return Err(Error::shape("teacher, student and labels disagree in size"));
    }
    let n = labels.len();
    let nn = T::from_count(n);
    let t2 = temperature * temperature;
    let mut kl = T::zero();
    let mut d = vec![T::zero(); student_logits.len()];
    for i in 0..n {
        let tr = &teacher_logits[i * c..(i + 1) * c];
        let sr = &student_logits[i * c..(i + 1) * c];
        let qt = softmax_t(tr, temperature);
        let qs = softmax_t(sr, temperature);
        let ts: Vec<T> = tr.iter().map(|&v| v / temperature).collect();
        let ss: Vec<T> = sr.iter().map(|&v| v / temperature).collect();
        let (lt, ls) = (log_sum_exp(&ts), log_sum_exp(&ss));
        let mut row_kl = T::zero();
        for k in 0..c {
            if qt[k] > T::zero() {
                row_kl += qt[k] * ((ts[k] - lt) - (ss[k] - ls));
            }
            d[i * c + k] = soft * temperature * (qs[k] - qt[k]) / nn;
        }
        kl += row_kl.max(T::zero());
    }
    kl /= nn;
    let (hard_loss, hard_grad) = classification_loss(student_logits, labels, c)?;
    d.iter_mut().zip(&hard_grad).for_each(|(a, &b)| *a += hard * b);
    Ok(DistillTerms { total: soft * t2 * kl + hard * hard_loss, kl, hard: hard_loss, dlogits: d })
}
