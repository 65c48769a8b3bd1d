use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetaMatrix;
use crate::classical::{lr_loss_and_grad, ClassicalKind, ClassicalModel};
use crate::error::{Error, Result};
use crate::neural::{
    init_transformer, preset, train_classifier, Adam, EpochLoss, LabeledInputs, Lineage, LossCurve, Scale, TrainOptions, TransformerModel,
};
use crate::prob::ProbMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaKind {
    /// Small roberta-like encoder reading one projected token per base.
    TransformerHead,
    /// Multinomial logistic regression on the flat features.
    Logistic,
}

impl std::str::FromStr for MetaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transformer-head" | "transformer_head" => Ok(MetaKind::TransformerHead),
            "logistic" => Ok(MetaKind::Logistic),
            other => Err(Error::Config(format!("unknown meta kind `{other}` (expected transformer-head or logistic)"))),
        }
    }
}

impl std::fmt::Display for MetaKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetaKind::TransformerHead => "transformer-head",
            MetaKind::Logistic => "logistic",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaSpec {
    pub kind: MetaKind,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// L2 penalty of the logistic kind.
    pub l2: f64,
    pub train: TrainOptions,
}

impl Default for MetaSpec {
    fn default() -> Self {
        MetaSpec {
            kind: MetaKind::TransformerHead,
            hidden: 16,
            layers: 1,
            heads: 2,
            l2: 1e-4,
            train: TrainOptions { epochs: 30, learning_rate: 3e-3, batch_size: 32, ..Default::default() },
        }
    }
}

impl MetaSpec {
    pub fn logistic() -> Self {
        MetaSpec { kind: MetaKind::Logistic, train: TrainOptions { learning_rate: 0.05, ..MetaSpec::default().train }, ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MetaModel<T> {
    Transformer(TransformerModel<T>),
    Logistic(ClassicalModel<T>),
}

impl<T: Scalar> MetaModel<T> {
    pub fn kind(&self) -> MetaKind {
        match self {
            MetaModel::Transformer(_) => MetaKind::TransformerHead,
            MetaModel::Logistic(_) => MetaKind::Logistic,
        }
    }

    pub fn predict_proba(&self, m: &MetaMatrix<T>) -> Result<ProbMatrix<T>> {
        match self {
            MetaModel::Transformer(t) => t.predict_proba(&m.to_inputs()),
            MetaModel::Logistic(lr) => lr.predict_proba(&m.to_sparse()),
        }
    }
}

/// Trains the meta classifier on `(m, y)`, tracking loss on `val` when given.
pub fn build_meta<T: Scalar>(
    spec: &MetaSpec,
    m: &MetaMatrix<T>,
    y: &[usize],
    val: Option<(&MetaMatrix<T>, &[usize])>,
) -> Result<(MetaModel<T>, LossCurve)> {
    if m.rows() != y.len() {
        return Err(Error::shape(format!("{} meta rows vs {} labels", m.rows(), y.len())));
    }
    if let Some((v, vy)) = val {
        if v.rows() != vy.len() || v.bases() != m.bases() || v.classes() != m.classes() {
            return Err(Error::shape("validation meta matrix does not match the training one"));
        }
    }
    let c = m.classes();
    if let Some(&label) = y.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    match spec.kind {
        MetaKind::TransformerHead => {
            let mut cfg = preset(Lineage::RobertaLike, Scale::Desk).projected(m.bases(), c).with_classes(c);
            cfg.hidden = spec.hidden;
            cfg.layers = spec.layers;
            cfg.heads = spec.heads;
            let model: TransformerModel<T> = init_transformer(cfg, spec.train.seed)?;
            let train = LabeledInputs::new(m.to_inputs(), y.to_vec())?;
            let val = match val {
                Some((v, vy)) => Some(LabeledInputs::new(v.to_inputs(), vy.to_vec())?),
                None => None,
            };
            let (trained, curve) = train_classifier(&model, &train, val.as_ref(), &spec.train)?;
            Ok((MetaModel::Transformer(trained), curve))
        }
        MetaKind::Logistic => {
            let (model, curve) = train_logistic(m, y, val, spec)?;
            Ok((MetaModel::Logistic(model), curve))
        }
    }
}

/// Mini-batch Adam on the exact logistic loss, so the meta curve has one
/// entry per epoch like the transformer kind.
fn train_logistic<T: Scalar>(
    m: &MetaMatrix<T>,
    y: &[usize],
    val: Option<(&MetaMatrix<T>, &[usize])>,
    spec: &MetaSpec,
) -> Result<(ClassicalModel<T>, LossCurve)> {
    let opts = &spec.train;
    opts.validate()?;
    let (c, d) = (m.classes(), m.width());
    let heads = if c == 2 { 1 } else { c };
    let x = m.to_sparse();
    let xv = val.map(|(v, vy)| (v.to_sparse(), vy));
    let l2 = T::lit(spec.l2);
    let mut params = vec![T::zero(); heads * d + heads];
    let mut adam = Adam::new(params.len(), opts.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut curve = LossCurve::default();
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(opts.batch_size) {
            let xb = x.select(idx);
            let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let (w, b) = params.split_at(heads * d);
            let (loss, gw, gb) = lr_loss_and_grad(w, b, &xb, &yb, c, l2);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss.to_f64_lossy() * idx.len() as f64;
            let grad: Vec<T> = gw.into_iter().chain(gb).collect();
            adam.step(&mut params, &grad);
        }
        let (w, b) = params.split_at(heads * d);
        let val_loss = xv.as_ref().map(|(xv, vy)| lr_loss_and_grad(w, b, xv, vy, c, T::zero()).0.to_f64_lossy());
        let val_accuracy = match &xv {
            Some((xv, vy)) => {
                let model = ClassicalModel::linear(ClassicalKind::Lr, c, d, w.to_vec(), b.to_vec())?;
                let pred = model.predict(xv)?;
                Some(pred.iter().zip(vy.iter()).filter(|(a, b)| a == b).count() as f64 / vy.len().max(1) as f64)
            }
            None => None,
        };
        curve.epochs.push(EpochLoss { epoch: epoch + 1, train_loss: total / x.len() as f64, val_loss, val_accuracy });
    }
    let (w, b) = params.split_at(heads * d);
    Ok((ClassicalModel::linear(ClassicalKind::Lr, c, d, w.to_vec(), b.to_vec())?, curve))
}
