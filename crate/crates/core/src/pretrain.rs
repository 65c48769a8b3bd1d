//! Pretraining objectives: masked language modeling with static or dynamic
//! masks, replaced-token detection and knowledge distillation.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::softmax_in_place;
use crate::neural::{
    distill_terms, init_transformer, run_training, DistillTerms, Inputs, InputKind, LabeledInputs, LossCurve, Phase, Target, Task,
    TrainOptions, TransformerConfig, TransformerModel,
};
use crate::scalar::Scalar;
use crate::tokenizer::{TokenSequence, MASK, SPECIAL_COUNT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskingSpec {
    pub mask_rate: f64,
    /// Resample the masked positions every epoch.
    pub dynamic: bool,
    pub mask_token_fraction: f64,
    pub random_fraction: f64,
    pub keep_fraction: f64,
}

impl Default for MaskingSpec {
    fn default() -> Self {
        MaskingSpec { mask_rate: 0.15, dynamic: false, mask_token_fraction: 0.8, random_fraction: 0.1, keep_fraction: 0.1 }
    }
}

impl MaskingSpec {
    pub fn dynamic() -> Self {
        MaskingSpec { dynamic: true, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.mask_rate, self.mask_token_fraction, self.random_fraction, self.keep_fraction];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("masking fractions must lie in [0, 1]".into()));
        }
        let sum = self.mask_token_fraction + self.random_fraction + self.keep_fraction;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mask/random/keep split sums to {sum}, not 1")));
        }
        Ok(())
    }
}

/// A corpus with masks applied.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedCorpus {
    /// Corrupted copies of the input sequences.
    pub inputs: Vec<TokenSequence>,
    /// Per sequence: `(position, original id)` of every selected position.
    pub targets: Vec<Vec<(usize, u32)>>,
}

impl MaskedCorpus {
    pub fn masked_count(&self) -> usize {
        self.targets.iter().map(Vec::len).sum()
    }
}

/// Real positions after the start token; these are the only ones masked.
pub fn maskable_positions(seq: &TokenSequence) -> impl Iterator<Item = usize> + '_ {
    seq.attention_mask.iter().enumerate().skip(1).filter(|(_, &m)| m == 1).map(|(t, _)| t)
}

fn epoch_rng(seed: u64, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}

/// Selects each maskable position with probability `mask_rate` and corrupts
/// it with the mask/random/keep split. The outcome depends only on
/// `(seed, epoch)`, and only on `seed` when masking is static.
pub fn apply_masking(seqs: &[TokenSequence], spec: &MaskingSpec, vocab_size: usize, seed: u64, epoch: usize) -> Result<MaskedCorpus> {
    spec.validate()?;
    if vocab_size <= SPECIAL_COUNT {
        return Err(Error::Config("vocabulary has no ordinary tokens".into()));
    }
    let key = if spec.dynamic { epoch as u64 } else { 0 };
    let mut rng = epoch_rng(seed, key);
    let mut inputs = Vec::with_capacity(seqs.len());
    let mut targets = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let mut out = seq.clone();
        let mut picked = Vec::new();
        for t in maskable_positions(seq) {
            if rng.random::<f64>() >= spec.mask_rate {
                continue;
            }
            let u: f64 = rng.random();
            let orig = seq.ids[t];
            if u < spec.mask_token_fraction {
                out.ids[t] = MASK;
            } else if u < spec.mask_token_fraction + spec.random_fraction {
                out.ids[t] = rng.random_range(SPECIAL_COUNT as u32..vocab_size as u32);
            }
            picked.push((t, orig));
        }
        inputs.push(out);
        targets.push(picked);
    }
    Ok(MaskedCorpus { inputs, targets })
}

fn check_token_model<T: Scalar>(m: &TransformerModel<T>) -> Result<()> {
    match m.config().input {
        InputKind::Tokens => Ok(()),
        InputKind::Projected { .. } => Err(Error::Config("pretraining needs a token-input model".into())),
    }
}

fn flat_targets(masked: &MaskedCorpus, idx: &[usize], l: usize) -> Vec<(usize, u32)> {
    idx.iter().enumerate().flat_map(|(k, &i)| masked.targets[i].iter().map(move |&(t, id)| (k * l + t, id))).collect()
}

/// Lazily masked corpus, regenerated when the epoch key changes.
struct EpochMasks<'a> {
    corpus: &'a [TokenSequence],
    spec: &'a MaskingSpec,
    vocab: usize,
    seed: u64,
    current: RefCell<Option<(usize, MaskedCorpus)>>,
}

impl EpochMasks<'_> {
    fn with<R>(&self, epoch: usize, f: impl FnOnce(&MaskedCorpus) -> Result<R>) -> Result<R> {
        let key = if self.spec.dynamic { epoch } else { 0 };
        let mut slot = self.current.borrow_mut();
        if slot.as_ref().is_none_or(|(k, _)| *k != key) {
            let masked = apply_masking(self.corpus, self.spec, self.vocab, self.seed, epoch)?;
            if masked.masked_count() == 0 {
                return Err(Error::NoMaskedPositions);
            }
            *slot = Some((key, masked));
        }
        f(&slot.as_ref().expect("just filled").1)
    }
}

struct MlmTask<'a> {
    masks: EpochMasks<'a>,
    len: usize,
}

impl<T: Scalar> Task<T> for MlmTask<'_> {
    fn len(&self) -> usize {
        self.masks.corpus.len()
    }

    fn batch(&self, model: &TransformerModel<T>, idx: &[usize], epoch: usize, rng: &mut ChaCha8Rng) -> Result<(T, Vec<T>)> {
        self.masks.with(epoch, |masked| {
            let pairs = flat_targets(masked, idx, self.len);
            if pairs.is_empty() {
                // nothing to predict in this batch
                return Ok((T::zero(), vec![T::zero(); model.parameter_count()]));
            }
            let inputs = Inputs::Tokens(idx.iter().map(|&i| masked.inputs[i].clone()).collect());
            model.loss_and_grad(&inputs, Target::Mlm(&pairs), Some(rng))
        })
    }
}

/// Masked-language-model pretraining through the tied output projection.
/// The mask generator is seeded with `opts.seed`.
pub fn mlm_pretrain<T: Scalar>(
    model: &TransformerModel<T>,
    corpus: &[TokenSequence],
    spec: &MaskingSpec,
    opts: &TrainOptions,
) -> Result<(TransformerModel<T>, LossCurve)> {
    check_token_model(model)?;
    model.check_inputs(&Inputs::Tokens(corpus.to_vec()))?;
    let cfg = model.config();
    let masks = EpochMasks { corpus, spec, vocab: cfg.vocab_size, seed: opts.seed, current: RefCell::new(None) };
    let task = MlmTask { masks, len: cfg.max_len };
    let mut m = model.clone();
    let curve = run_training(&mut m, &task, opts)?;
    m.set_phase(Phase::Pretrained);
    Ok((m, curve))
}

/// Mean masked-position cross-entropy of `model` on the masks of `(seed, epoch)`,
/// without dropout.
pub fn mlm_loss<T: Scalar>(model: &TransformerModel<T>, corpus: &[TokenSequence], spec: &MaskingSpec, seed: u64, epoch: usize) -> Result<f64> {
    check_token_model(model)?;
    let masked = apply_masking(corpus, spec, model.config().vocab_size, seed, epoch)?;
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let pairs = flat_targets(&masked, &idx, model.config().max_len);
    if pairs.is_empty() {
        return Err(Error::NoMaskedPositions);
    }
    let inputs = Inputs::Tokens(masked.inputs);
    model.check_inputs(&inputs)?;
    Ok(model.loss_and_grad(&inputs, Target::Mlm(&pairs), None)?.0.to_f64_lossy())
}

/// Per-position replaced-token labels for a batch, flattened `N·L`:
/// 1 where the token differs from the original, 0 elsewhere (padding included).
pub fn rtd_labels(original: &[TokenSequence], replaced: &[TokenSequence]) -> Vec<u8> {
    original
        .iter()
        .zip(replaced)
        .flat_map(|(o, r)| o.ids.iter().zip(&r.ids).zip(&o.attention_mask).map(|((a, b), &m)| u8::from(m == 1 && a != b)))
        .collect()
}

/// Masks the corpus, fills every masked position with a token sampled from
/// the generator's output distribution over ordinary tokens and returns the
/// replaced sequences with their labels.
pub fn generator_replace<T: Scalar>(
    generator: &TransformerModel<T>,
    corpus: &[TokenSequence],
    spec: &MaskingSpec,
    seed: u64,
    epoch: usize,
) -> Result<(Vec<TokenSequence>, Vec<u8>)> {
    check_token_model(generator)?;
    let cfg = generator.config();
    let (v, l) = (cfg.vocab_size, cfg.max_len);
    let masked = apply_masking(corpus, spec, v, seed, epoch)?;
    let mut rng = epoch_rng(seed, u64::MAX - epoch as u64);
    let mut replaced = corpus.to_vec();
    let all: Vec<usize> = (0..corpus.len()).collect();
    for chunk in all.chunks(64) {
        let pairs = flat_targets(&masked, chunk, l);
        if pairs.is_empty() {
            continue;
        }
        let inputs = Inputs::Tokens(chunk.iter().map(|&i| masked.inputs[i].clone()).collect());
        let positions: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let logits = generator.mlm_logits(&inputs, &positions)?;
        for (row, &flat) in logits.chunks(v).zip(&positions) {
            let mut probs = row[SPECIAL_COUNT..].to_vec();
            softmax_in_place(&mut probs);
            let u = T::lit(rng.random::<f64>());
            let mut acc = T::zero();
            let mut pick = probs.len() - 1;
            for (k, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            let (s, t) = (chunk[flat / l], flat % l);
            replaced[s].ids[t] = (SPECIAL_COUNT + pick) as u32;
        }
    }
    let labels = rtd_labels(corpus, &replaced);
    Ok((replaced, labels))
}

/// Mean per-position binary cross-entropy of the discriminator, no dropout.
pub fn rtd_loss<T: Scalar>(model: &TransformerModel<T>, seqs: &[TokenSequence], labels: &[u8]) -> Result<f64> {
    check_token_model(model)?;
    let inputs = Inputs::Tokens(seqs.to_vec());
    model.check_inputs(&inputs)?;
    Ok(model.loss_and_grad(&inputs, Target::Rtd(labels), None)?.0.to_f64_lossy())
}

struct RtdTask<'a, T> {
    generator: &'a TransformerModel<T>,
    corpus: &'a [TokenSequence],
    spec: &'a MaskingSpec,
    seed: u64,
    current: RefCell<Option<(usize, Vec<TokenSequence>, Vec<u8>)>>,
}

impl<T: Scalar> Task<T> for RtdTask<'_, T> {
    fn len(&self) -> usize {
        self.corpus.len()
    }

    fn batch(&self, model: &TransformerModel<T>, idx: &[usize], epoch: usize, rng: &mut ChaCha8Rng) -> Result<(T, Vec<T>)> {
        let key = if self.spec.dynamic { epoch } else { 0 };
        let mut slot = self.current.borrow_mut();
        if slot.as_ref().is_none_or(|(k, _, _)| *k != key) {
            let (replaced, labels) = generator_replace(self.generator, self.corpus, self.spec, self.seed, epoch)?;
            *slot = Some((key, replaced, labels));
        }
        let (_, replaced, labels) = slot.as_ref().expect("just filled");
        let l = model.config().max_len;
        let inputs = Inputs::Tokens(idx.iter().map(|&i| replaced[i].clone()).collect());
        let y: Vec<u8> = idx.iter().flat_map(|&i| labels[i * l..(i + 1) * l].iter().copied()).collect();
        model.loss_and_grad(&inputs, Target::Rtd(&y), Some(rng))
    }
}

/// Replaced-token detection: the generator corrupts masked positions and the
/// discriminator learns to flag replaced tokens at every real position.
/// The generator is used as given.
pub fn rtd_pretrain<T: Scalar>(
    generator: &TransformerModel<T>,
    discriminator: &TransformerModel<T>,
    corpus: &[TokenSequence],
    spec: &MaskingSpec,
    opts: &TrainOptions,
) -> Result<(TransformerModel<T>, LossCurve)> {
    check_token_model(generator)?;
    check_token_model(discriminator)?;
    let (g, d) = (generator.config(), discriminator.config());
    if g.vocab_size != d.vocab_size || g.max_len != d.max_len {
        return Err(Error::Config("generator and discriminator must share vocabulary and length".into()));
    }
    discriminator.check_inputs(&Inputs::Tokens(corpus.to_vec()))?;
    let task = RtdTask { generator, corpus, spec, seed: opts.seed, current: RefCell::new(None) };
    let mut m = discriminator.clone();
    let curve = run_training(&mut m, &task, opts)?;
    m.set_phase(Phase::Pretrained);
    Ok((m, curve))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillSpec {
    pub temperature: f64,
    pub soft_weight: f64,
    pub hard_weight: f64,
    /// Start the student from the teacher's embeddings and evenly spaced layers.
    pub init_from_teacher: bool,
}

impl Default for DistillSpec {
    fn default() -> Self {
        DistillSpec { temperature: 2.0, soft_weight: 0.5, hard_weight: 0.5, init_from_teacher: true }
    }
}

impl DistillSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.soft_weight < 0.0 || self.hard_weight < 0.0 || self.soft_weight + self.hard_weight == 0.0 {
            return Err(Error::Config("distillation weights must be non-negative and not both zero".into()));
        }
        Ok(())
    }
}

/// `soft · T² · KL(teacher_T ‖ student_T) + hard · CE(student, labels)`,
/// averaged over rows, with the gradient w.r.t. the student logits.
pub fn distillation_loss<T: Scalar>(
    teacher_logits: &[T],
    student_logits: &[T],
    labels: &[usize],
    classes: usize,
    spec: &DistillSpec,
) -> Result<DistillTerms<T>> {
    spec.validate()?;
    distill_terms(
        teacher_logits,
        student_logits,
        labels,
        classes,
        T::lit(spec.temperature),
        T::lit(spec.soft_weight),
        T::lit(spec.hard_weight),
    )
}

fn teacher_logits<T: Scalar>(teacher: &TransformerModel<T>, inputs: &Inputs<T>) -> Result<Vec<T>> {
    let all: Vec<usize> = (0..inputs.len()).collect();
    let mut out = Vec::with_capacity(inputs.len() * teacher.config().classes);
    for chunk in all.chunks(64) {
        out.extend(teacher.forward(&inputs.select(chunk))?.logits);
    }
    Ok(out)
}

/// Mean distillation terms of `student` against `teacher` on `data`.
pub fn distillation_eval<T: Scalar>(
    teacher: &TransformerModel<T>,
    student: &TransformerModel<T>,
    data: &LabeledInputs<T>,
    spec: &DistillSpec,
) -> Result<DistillTerms<T>> {
    let t = teacher_logits(teacher, &data.inputs)?;
    let s = teacher_logits(student, &data.inputs)?;
    distillation_loss(&t, &s, &data.labels, student.config().classes, spec)
}

struct DistillTask<'a, T> {
    data: &'a LabeledInputs<T>,
    teacher_logits: Vec<T>,
    val: Option<(&'a LabeledInputs<T>, Vec<T>)>,
    spec: &'a DistillSpec,
    classes: usize,
}

impl<T: Scalar> Task<T> for DistillTask<'_, T> {
    fn len(&self) -> usize {
        self.data.len()
    }

    fn batch(&self, model: &TransformerModel<T>, idx: &[usize], _epoch: usize, rng: &mut ChaCha8Rng) -> Result<(T, Vec<T>)> {
        let c = self.classes;
        let part = self.data.select(idx);
        let t: Vec<T> = idx.iter().flat_map(|&i| self.teacher_logits[i * c..(i + 1) * c].iter().copied()).collect();
        let target = Target::Distill {
            teacher_logits: &t,
            labels: &part.labels,
            temperature: T::lit(self.spec.temperature),
            soft: T::lit(self.spec.soft_weight),
            hard: T::lit(self.spec.hard_weight),
        };
        model.loss_and_grad(&part.inputs, target, Some(rng))
    }

    fn validate(&self, model: &TransformerModel<T>) -> Result<Option<(f64, Option<f64>)>> {
        let Some((val, t)) = &self.val else { return Ok(None) };
        let s = teacher_logits(model, &val.inputs)?;
        let terms = distillation_loss(t, &s, &val.labels, self.classes, self.spec)?;
        let (_, acc) = crate::neural::evaluate(model, val)?;
        Ok(Some((terms.total.to_f64_lossy(), Some(acc))))
    }
}

/// Trains a student of configuration `student_cfg` to match `teacher`.
pub fn distill<T: Scalar>(
    teacher: &TransformerModel<T>,
    student_cfg: &TransformerConfig,
    data: &LabeledInputs<T>,
    val: Option<&LabeledInputs<T>>,
    spec: &DistillSpec,
    opts: &TrainOptions,
) -> Result<(TransformerModel<T>, LossCurve)> {
    spec.validate()?;
    let tc = teacher.config();
    if student_cfg.layers > tc.layers {
        return Err(Error::Config(format!("student depth {} exceeds teacher depth {}", student_cfg.layers, tc.layers)));
    }
    if student_cfg.classes != tc.classes || student_cfg.input != tc.input || student_cfg.max_len != tc.max_len {
        return Err(Error::Config("student and teacher must agree on classes and input shape".into()));
    }
    let mut student: TransformerModel<T> = init_transformer(student_cfg.clone(), opts.seed)?;
    if spec.init_from_teacher {
        init_student_from(&mut student, teacher);
    }
    student.check_inputs(&data.inputs)?;
    let t = teacher_logits(teacher, &data.inputs)?;
    let val = match val {
        Some(v) => Some((v, teacher_logits(teacher, &v.inputs)?)),
        None => None,
    };
    let task = DistillTask { data, teacher_logits: t, val, spec, classes: tc.classes };
    let curve = run_training(&mut student, &task, opts)?;
    student.set_phase(Phase::Finetuned);
    Ok((student, curve))
}

/// Copies non-layer groups with matching shapes and maps student layer `i`
/// onto teacher layer `i · teacher_layers / student_layers`.
fn init_student_from<T: Scalar>(student: &mut TransformerModel<T>, teacher: &TransformerModel<T>) {
    let (ls, lt) = (student.config().layers, teacher.config().layers);
    let groups = student.layout().groups.clone();
    for g in groups {
        let src_name = match g.name.strip_prefix("layer") {
            Some(rest) => {
                let (idx, tail) = rest.split_once('.').expect("layer groups are dotted");
                let i: usize = idx.parse().expect("numeric layer index");
                format!("layer{}.{tail}", i * lt / ls)
            }
            None => g.name.clone(),
        };
        if let Some(src) = teacher.layout().group(&src_name).filter(|s| s.len == g.len) {
            let from = teacher.params()[src.offset..src.offset + src.len].to_vec();
            student.params_mut()[g.offset..g.offset + g.len].copy_from_slice(&from);
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::neural::{preset, Lineage, Scale};
    use crate::tokenizer::PAD;

    fn corpus(n: usize, len: usize, vocab: u32, seed: u64) -> Vec<TokenSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let real = rng.random_range(2..len);
                let body: Vec<u32> = (0..real).map(|_| rng.random_range(SPECIAL_COUNT as u32..vocab)).collect();
                TokenSequence::from_ids(&body, len)
            })
            .collect()
    }

    fn full(n: usize, len: usize, vocab: u32, seed: u64) -> Vec<TokenSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let body: Vec<u32> = (0..len - 1).map(|_| rng.random_range(SPECIAL_COUNT as u32..vocab)).collect();
                TokenSequence::from_ids(&body, len)
            })
            .collect()
    }

    fn small(layers: usize, vocab: usize, len: usize) -> TransformerConfig {
        let mut c = preset(Lineage::BertLike, Scale::Desk).with_vocab(vocab).with_max_len(len);
        c.layers = layers;
        c.hidden = 16;
        c.heads = 2;
        c.ffn_multiplier = 2;
        c
    }

    #[test]
    fn masked_count_concentrates_at_the_rate() {
        // 1000 sequences with 10 maskable positions each
        let seqs = full(1000, 11, 50, 1);
        let total: usize = seqs.iter().map(|s| maskable_positions(s).count()).sum();
        assert_eq!(total, 10_000);
        for seed in 0..5 {
            let m = apply_masking(&seqs, &MaskingSpec::default(), 50, seed, 0).unwrap();
            let k = m.masked_count();
            assert!((1350..=1650).contains(&k), "{k}");
        }
    }

    #[test]
    fn masking_split_and_protected_positions() {
        let seqs = full(2000, 11, 50, 2);
        let m = apply_masking(&seqs, &MaskingSpec::default(), 50, 3, 0).unwrap();
        let (mut masked, mut kept, mut random) = (0, 0, 0);
        for ((orig, out), targets) in seqs.iter().zip(&m.inputs).zip(&m.targets) {
            assert_eq!(out.ids[0], orig.ids[0]);
            for &(t, id) in targets {
                assert!(t > 0);
                assert_eq!(orig.ids[t], id);
                match out.ids[t] {
                    MASK => masked += 1,
                    x if x == id => kept += 1,
                    _ => random += 1,
                }
            }
            let chosen: Vec<usize> = targets.iter().map(|p| p.0).collect();
            for t in 0..11 {
                if !chosen.contains(&t) {
                    assert_eq!(out.ids[t], orig.ids[t]);
                }
            }
        }
        let n = m.masked_count() as f64;
        assert!((masked as f64 / n - 0.8).abs() < 0.03);
        // random draws can hit the original id (1 in 45)
        assert!(((kept + random) as f64 / n - 0.2).abs() < 0.03);
    }

    #[test]
    fn static_masks_repeat_and_dynamic_masks_change() {
        let seqs = corpus(100, 12, 40, 3);
        let st = MaskingSpec::default();
        assert_eq!(apply_masking(&seqs, &st, 40, 7, 0).unwrap(), apply_masking(&seqs, &st, 40, 7, 5).unwrap());
        let dy = MaskingSpec::dynamic();
        let e1 = apply_masking(&seqs, &dy, 40, 7, 1).unwrap();
        assert_eq!(e1, apply_masking(&seqs, &dy, 40, 7, 1).unwrap());
        assert_ne!(e1, apply_masking(&seqs, &dy, 40, 7, 2).unwrap());
    }

    #[test]
    fn zero_rate_is_an_error() {
        let seqs = corpus(10, 8, 30, 1);
        let m: TransformerModel<f64> = init_transformer(small(1, 30, 8), 0).unwrap();
        let spec = MaskingSpec { mask_rate: 0.0, ..Default::default() };
        let r = mlm_pretrain(&m, &seqs, &spec, &TrainOptions { epochs: 1, ..Default::default() });
        assert!(matches!(r, Err(Error::NoMaskedPositions)));
        let bad = MaskingSpec { keep_fraction: 0.2, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn initial_mlm_loss_is_near_log_vocab() {
        let cfg = preset(Lineage::BertLike, Scale::Desk);
        let m: TransformerModel<f64> = init_transformer(cfg.clone(), 1).unwrap();
        let seqs = corpus(40, cfg.max_len, cfg.vocab_size as u32, 4);
        let loss = mlm_loss(&m, &seqs, &MaskingSpec::default(), 0, 0).unwrap();
        let lnv = (cfg.vocab_size as f64).ln();
        assert!((loss - lnv).abs() / lnv < 0.05, "{loss} vs {lnv}");
    }

    #[test]
    fn mlm_pretraining_reduces_loss_and_tags_phase() {
        // Tokens come in fixed pairs, so a masked token is predictable from its neighbour.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seqs: Vec<TokenSequence> = (0..120)
            .map(|_| {
                let mut body = Vec::new();
                for _ in 0..4 {
                    let a = rng.random_range(5..15u32);
                    body.extend([a, a + 10]);
                }
                TokenSequence::from_ids(&body, 9)
            })
            .collect();
        let m: TransformerModel<f64> = init_transformer(small(1, 30, 9), 0).unwrap();
        let spec = MaskingSpec::dynamic();
        let before = mlm_loss(&m, &seqs, &spec, 99, 0).unwrap();
        let opts = TrainOptions { epochs: 15, learning_rate: 3e-3, batch_size: 16, seed: 1, ..Default::default() };
        let (p, curve) = mlm_pretrain(&m, &seqs, &spec, &opts).unwrap();
        assert_eq!(p.phase(), Phase::Pretrained);
        assert_eq!(curve.len(), 15);
        let after = mlm_loss(&p, &seqs, &spec, 99, 0).unwrap();
        assert!(after < before - 0.5, "{before} -> {after}");
    }

    #[test]
    fn rtd_labels_are_the_replacement_indicator() {
        let seqs = corpus(60, 10, 40, 6);
        let g: TransformerModel<f64> = init_transformer(small(1, 40, 10), 2).unwrap();
        let spec = MaskingSpec::default();
        let (replaced, labels) = generator_replace(&g, &seqs, &spec, 3, 0).unwrap();
        let masked = apply_masking(&seqs, &spec, 40, 3, 0).unwrap();
        let mut ones = 0;
        for (s, (o, r)) in seqs.iter().zip(&replaced).enumerate() {
            for t in 0..10 {
                let y = labels[s * 10 + t];
                assert_eq!(y == 1, o.ids[t] != r.ids[t]);
                ones += y as usize;
                if masked.targets[s].iter().all(|p| p.0 != t) {
                    assert_eq!(o.ids[t], r.ids[t]);
                }
            }
        }
        assert!(ones <= masked.masked_count());
        assert!(ones > 0);
        assert!(replaced.iter().flat_map(|r| &r.ids).all(|&id| id == PAD || id >= 2));
        // an identity generator yields all-zero labels
        assert!(rtd_labels(&seqs, &seqs).iter().all(|&y| y == 0));
    }

    #[test]
    fn rtd_loss_covers_every_real_position() {
        let seqs = corpus(8, 10, 40, 7);
        let m: TransformerModel<f64> = init_transformer(small(1, 40, 10), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<u8> = (0..80).map(|_| rng.random_range(0..2)).collect();
        let logits = m.rtd_logits(&Inputs::Tokens(seqs.clone())).unwrap();
        let mut sum = 0.0;
        let mut n = 0.0;
        for (k, (&x, &y)) in logits.iter().zip(&labels).enumerate() {
            if seqs[k / 10].attention_mask[k % 10] == 1 {
                let p: f64 = 1.0 / (1.0 + (-x).exp());
                sum -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
                n += 1.0;
            }
        }
        let got = rtd_loss(&m, &seqs, &labels).unwrap();
        assert!((got - sum / n).abs() < 1e-12);
    }

    #[test]
    fn rtd_pretraining_learns_to_spot_replacements() {
        let seqs = corpus(100, 10, 40, 8);
        let cfg = small(1, 40, 10);
        let g: TransformerModel<f64> = init_transformer(cfg.clone(), 1).unwrap();
        let d: TransformerModel<f64> = init_transformer(cfg, 2).unwrap();
        let spec = MaskingSpec::default();
        let (replaced, labels) = generator_replace(&g, &seqs, &spec, 50, 0).unwrap();
        let before = rtd_loss(&d, &replaced, &labels).unwrap();
        let opts = TrainOptions { epochs: 10, learning_rate: 3e-3, batch_size: 20, seed: 4, ..Default::default() };
        let (trained, _) = rtd_pretrain(&g, &d, &seqs, &spec, &opts).unwrap();
        let after = rtd_loss(&trained, &replaced, &labels).unwrap();
        assert!(after < before, "{before} -> {after}");
        assert_eq!(trained.phase(), Phase::Pretrained);
    }

    #[test]
    fn one_hot_teacher_reduces_to_cross_entropy() {
        let student = [0.3, -1.2, 0.4, 2.0, 0.1, -0.5];
        let teacher = [0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0];
        let spec = DistillSpec { temperature: 1.0, soft_weight: 1.0, hard_weight: 0.0, init_from_teacher: false };
        let d = distillation_loss(&teacher, &student, &[0, 2], 3, &spec).unwrap();
        let ce = |row: &[f64], y: usize| {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            z.ln() - row[y]
        };
        let want = (ce(&student[..3], 0) + ce(&student[3..], 2)) / 2.0;
        assert!((d.total - want).abs() < 1e-12);
        let hard = DistillSpec { soft_weight: 0.0, hard_weight: 1.0, ..spec };
        let h = distillation_loss(&teacher, &student, &[0, 2], 3, &hard).unwrap();
        for (a, b) in d.dlogits.iter().zip(&h.dlogits) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn distillation_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = [0, 1, 3];
        let spec = DistillSpec { temperature: 2.5, soft_weight: 0.7, hard_weight: 0.3, init_from_teacher: false };
        let d = distillation_loss(&t, &s, &labels, 4, &spec).unwrap();
        for i in 0..12 {
            let mut up = s.clone();
            up[i] += 1e-6;
            let mut dn = s.clone();
            dn[i] -= 1e-6;
            let num = (distillation_loss(&t, &up, &labels, 4, &spec).unwrap().total
                - distillation_loss(&t, &dn, &labels, 4, &spec).unwrap().total)
                / 2e-6;
            assert!((num - d.dlogits[i]).abs() < 1e-7, "{i}: {num} vs {}", d.dlogits[i]);
        }
    }

    proptest! {
        #[test]
        fn kl_is_non_negative_and_zero_on_match(
            t in prop::collection::vec(-5.0f64..5.0, 9),
            s in prop::collection::vec(-5.0f64..5.0, 9),
            temp in 0.5f64..4.0,
        ) {
            let spec = DistillSpec { temperature: temp, soft_weight: 1.0, hard_weight: 0.0, init_from_teacher: false };
            let d = distillation_loss(&t, &s, &[0, 1, 2], 3, &spec).unwrap();
            prop_assert!(d.kl >= 0.0);
            prop_assert!(d.total >= 0.0);
            let same = distillation_loss(&t, &t, &[0, 1, 2], 3, &spec).unwrap();
            prop_assert!(same.kl.abs() < 1e-12);
        }
    }

    fn trigger(n: usize, len: usize, seed: u64) -> LabeledInputs<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seqs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let mut body: Vec<u32> = (0..len - 1).map(|_| rng.random_range(6..20)).collect();
            if i % 2 == 1 {
                let at = rng.random_range(0..body.len());
                body[at] = 5;
            }
            seqs.push(TokenSequence::from_ids(&body, len));
            labels.push(i % 2);
        }
        LabeledInputs::new(Inputs::Tokens(seqs), labels).unwrap()
    }

    #[test]
    fn capacity_matched_student_approaches_teacher() {
        let cfg = small(1, 20, 8);
        let base: TransformerModel<f64> = init_transformer(cfg.clone(), 0).unwrap();
        let train = trigger(200, 8, 1);
        let held = trigger(100, 8, 2);
        let opts = TrainOptions { epochs: 15, learning_rate: 3e-3, batch_size: 16, seed: 1, ..Default::default() };
        let (teacher, _) = crate::neural::train_classifier(&base, &train, None, &opts).unwrap();
        let spec = DistillSpec { temperature: 2.0, soft_weight: 1.0, hard_weight: 0.0, init_from_teacher: false };
        let dopts = TrainOptions { epochs: 30, seed: 3, ..opts };
        let (student, curve) = distill(&teacher, &cfg, &train, Some(&held), &spec, &dopts).unwrap();
        assert!(curve.epochs.iter().all(|e| e.train_loss >= 0.0));
        let kl = distillation_eval(&teacher, &student, &held, &spec).unwrap().kl;
        assert!(kl < 0.05, "held-out KL {kl}");
    }

    #[test]
    fn student_starts_from_spaced_teacher_layers() {
        let mut tc = small(4, 20, 8);
        tc.dropout = 0.0;
        let teacher: TransformerModel<f64> = init_transformer(tc.clone(), 1).unwrap();
        let mut sc = tc.clone();
        sc.layers = 2;
        let mut student: TransformerModel<f64> = init_transformer(sc.clone(), 2).unwrap();
        init_student_from(&mut student, &teacher);
        let get = |m: &TransformerModel<f64>, n: &str| {
            let g = m.layout().group(n).unwrap();
            m.params()[g.offset..g.offset + g.len].to_vec()
        };
        assert_eq!(get(&student, "layer1.wq"), get(&teacher, "layer2.wq"));
        assert_eq!(get(&student, "embed"), get(&teacher, "embed"));
        let deeper = TransformerConfig { layers: 5, ..tc };
        let data = trigger(10, 8, 3);
        assert!(distill(&teacher, &deeper, &data, None, &DistillSpec::default(), &TrainOptions::default()).is_err());
    }
}
