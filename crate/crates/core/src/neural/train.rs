use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::Inputs;
use super::model::{classification_loss, Phase, Target, TransformerModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr: T::lit(lr),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm cap.
    pub clip_norm: Option<f64>,
    /// Stop once validation accuracy reaches this value.
    pub target_val_accuracy: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 10, learning_rate: 3e-4, batch_size: 32, seed: 0, clip_norm: Some(1.0), target_val_accuracy: None }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// Per-epoch training (and validation) loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub epochs: Vec<EpochLoss>,
}

impl LossCurve {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochLoss> {
        self.epochs.last()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// `epoch,train_loss,val_loss`; epochs count from 1 and a missing
    /// validation loss is an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| format!("{v:?}")).unwrap_or_default();
            out.push_str(&format!("{},{:?},{}\n", e.epoch, e.train_loss, val));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut epochs = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Format(format!("loss curve: {e}")))?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("loss curve: bad number `{s}`")));
            epochs.push(EpochLoss {
                epoch: field(0).parse().map_err(|_| Error::Format("loss curve: bad epoch".into()))?,
                train_loss: num(field(1))?,
                val_loss: if field(2).is_empty() { None } else { Some(num(field(2))?) },
                val_accuracy: None,
            });
        }
        Ok(LossCurve { epochs })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// One optimization problem: a set of examples addressable by index.
pub(crate) trait Task<T: Scalar> {
    fn len(&self) -> usize;
    /// Mean loss and gradient on the examples `idx`.
    fn batch(&self, model: &TransformerModel<T>, idx: &[usize], epoch: usize, rng: &mut ChaCha8Rng) -> Result<(T, Vec<T>)>;
    /// Validation loss and (when meaningful) accuracy.
    fn validate(&self, _model: &TransformerModel<T>) -> Result<Option<(f64, Option<f64>)>> {
        Ok(None)
    }
}

fn clip<T: Scalar>(grad: &mut [T], max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grad.iter().map(|&g| g * g).sum::<T>().sqrt();
        let max = T::lit(max);
        if norm > max {
            let s = max / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Mini-batch Adam over a task. Batch order and dropout masks come from
/// one generator seeded with `opts.seed`.
pub(crate) fn run_training<T: Scalar>(model: &mut TransformerModel<T>, task: &dyn Task<T>, opts: &TrainOptions) -> Result<LossCurve> {
    opts.validate()?;
    let n = task.len();
    if n == 0 {
        return Err(Error::InvalidDataset("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(model.params.len(), opts.learning_rate);
    let mut curve = LossCurve::default();
    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(opts.batch_size) {
            let (loss, mut grad) = task.batch(model, idx, epoch, &mut rng).map_err(|e| match e {
                Error::Divergence { .. } => Error::Divergence { epoch },
                other => other,
            })?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            total += loss.to_f64_lossy() * idx.len() as f64;
            clip(&mut grad, opts.clip_norm);
            adam.step(&mut model.params, &grad);
        }
        let val = task.validate(model)?;
        let entry = EpochLoss {
            epoch: epoch + 1,
            train_loss: total / n as f64,
            val_loss: val.map(|v| v.0),
            val_accuracy: val.and_then(|v| v.1),
        };
        if !entry.train_loss.is_finite() || entry.val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        curve.epochs.push(entry);
        if let (Some(target), Some(acc)) = (opts.target_val_accuracy, entry.val_accuracy) {
            if acc >= target {
                break;
            }
        }
    }
    Ok(curve)
}

/// Encoded inputs with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledInputs<T> {
    pub inputs: Inputs<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LabeledInputs<T> {
    pub fn new(inputs: Inputs<T>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::shape(format!("{} inputs vs {} labels", inputs.len(), labels.len())));
        }
        Ok(LabeledInputs { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        LabeledInputs { inputs: self.inputs.select(idx), labels: idx.iter().map(|&i| self.labels[i]).collect() }
    }
}

/// Mean cross-entropy and accuracy of a model on labeled inputs, in chunks.
pub fn evaluate<T: Scalar>(model: &TransformerModel<T>, data: &LabeledInputs<T>) -> Result<(f64, f64)> {
    let c = model.config.classes;
    let mut loss = 0.0;
    let mut hits = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(64) {
        let part = data.select(idx);
        let out = model.forward(&part.inputs)?;
        let (l, _) = classification_loss(&out.logits, &part.labels, c)?;
        loss += l.to_f64_lossy() * idx.len() as f64;
        for (row, &y) in out.logits.chunks(c).zip(&part.labels) {
            let probs = crate::linalg::softmax_t(row, T::one());
            hits += usize::from(crate::prob::decide(&probs) == y);
        }
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, hits as f64 / n))
}

struct ClassifyTask<'a, T> {
    train: &'a LabeledInputs<T>,
    val: Option<&'a LabeledInputs<T>>,
}

impl<T: Scalar> Task<T> for ClassifyTask<'_, T> {
    fn len(&self) -> usize {
        self.train.len()
    }

    fn batch(&self, model: &TransformerModel<T>, idx: &[usize], _epoch: usize, rng: &mut ChaCha8Rng) -> Result<(T, Vec<T>)> {
        let part = self.train.select(idx);
        model.loss_and_grad(&part.inputs, Target::Classes(&part.labels), Some(rng))
    }

    fn validate(&self, model: &TransformerModel<T>) -> Result<Option<(f64, Option<f64>)>> {
        match self.val {
            Some(v) if !v.is_empty() => {
                let (loss, acc) = evaluate(model, v)?;
                Ok(Some((loss, Some(acc))))
            }
            _ => Ok(None),
        }
    }
}

fn check_labels<T: Scalar>(model: &TransformerModel<T>, data: &LabeledInputs<T>) -> Result<()> {
    model.check_inputs(&data.inputs)?;
    let c = model.config.classes;
    match data.labels.iter().find(|&&l| l >= c) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes: c }),
        None => Ok(()),
    }
}

/// Fine-tunes a copy of `model` on the classification head objective.
pub fn train_classifier<T: Scalar>(
    model: &TransformerModel<T>,
    train: &LabeledInputs<T>,
    val: Option<&LabeledInputs<T>>,
    opts: &TrainOptions,
) -> Result<(TransformerModel<T>, LossCurve)> {
    check_labels(model, train)?;
    if let Some(v) = val {
        check_labels(model, v)?;
    }
    let mut m = model.clone();
    let curve = run_training(&mut m, &ClassifyTask { train, val }, opts)?;
    m.phase = Phase::Finetuned;
    Ok((m, curve))
}
