use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, StackData, StackInputs};
use crate::classical::{train_classical, ClassicalKind, ClassicalModel, TrainSpec};
use crate::error::{Error, Result};
use crate::neural::{init_transformer, train_classifier, Inputs, LabeledInputs, LossCurve, TrainOptions, TransformerConfig, TransformerModel};
use crate::pretrain::{distill, mlm_pretrain, rtd_pretrain, DistillSpec, MaskingSpec};
use crate::prob::ProbMatrix;
use crate::scalar::Scalar;

/// Optional pretraining stage of a transformer base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "kebab-case")]
pub enum Pretraining {
    None,
    /// Masked language modeling on the training text.
    Mlm { masking: MaskingSpec, train: TrainOptions },
    /// Replaced-token detection against an MLM-trained generator with
    /// `generator_layers` layers.
    Rtd { masking: MaskingSpec, train: TrainOptions, generator_layers: usize },
    /// Distillation from the already trained base at index `teacher`.
    Distill { teacher: usize, spec: DistillSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum BaseModelSpec {
    Classical { kind: ClassicalKind, train: TrainSpec },
    Transformer { config: TransformerConfig, train: TrainOptions, pretrain: Pretraining },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseSpec {
    /// Unique name; also keys the base's seeds.
    pub name: String,
    pub model: BaseModelSpec,
    /// Relabel every training example of this class with a random other class.
    pub corrupt_class: Option<usize>,
}

impl BaseSpec {
    pub fn classical(name: impl Into<String>, kind: ClassicalKind) -> Self {
        BaseSpec { name: name.into(), model: BaseModelSpec::Classical { kind, train: TrainSpec::for_kind(kind, 0) }, corrupt_class: None }
    }

    pub fn transformer(name: impl Into<String>, config: TransformerConfig, train: TrainOptions, pretrain: Pretraining) -> Self {
        BaseSpec { name: name.into(), model: BaseModelSpec::Transformer { config, train, pretrain }, corrupt_class: None }
    }

    pub fn with_corruption(mut self, class: usize) -> Self {
        self.corrupt_class = Some(class);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BaseModel<T> {
    Classical(ClassicalModel<T>),
    Transformer(TransformerModel<T>),
}

impl<T: Scalar> BaseModel<T> {
    pub fn predict_proba(&self, inputs: &StackInputs<T>) -> Result<ProbMatrix<T>> {
        match self {
            BaseModel::Classical(m) => {
                let x = inputs.sparse.as_ref().ok_or_else(|| Error::Config("classical base needs sparse features".into()))?;
                m.predict_proba(x)
            }
            BaseModel::Transformer(m) => {
                let tokens = inputs.tokens.as_ref().ok_or_else(|| Error::Config("transformer base needs token sequences".into()))?;
                let c = m.config().classes;
                let mut data = Vec::with_capacity(tokens.len() * c);
                for chunk in tokens.chunks(64) {
                    data.extend(m.predict_proba(&Inputs::Tokens(chunk.to_vec()))?.into_vec());
                }
                ProbMatrix::new(tokens.len(), c, data)
            }
        }
    }
}

/// Replaces every label equal to `class` by a uniformly drawn other class.
pub(crate) fn corrupt_labels(labels: &[usize], classes: usize, class: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels
        .iter()
        .map(|&y| if y == class { (class + 1 + rng.random_range(0..classes - 1)) % classes } else { y })
        .collect()
}

fn labeled_tokens<T: Scalar>(data: &StackData<T>, labels: Vec<usize>) -> Result<LabeledInputs<T>> {
    let tokens = data.inputs.tokens.as_ref().ok_or_else(|| Error::Config("transformer base needs token sequences".into()))?;
    LabeledInputs::new(Inputs::Tokens(tokens.clone()), labels)
}

/// A trained base plus its fine-tuning curve (transformers only).
pub(crate) struct TrainedBase<T> {
    pub model: BaseModel<T>,
    pub curve: Option<LossCurve>,
}

/// Trains base `spec` on `data`. `round` distinguishes fold trainings (and
/// the deployment training) in the derived seeds; `earlier` holds the bases
/// already trained in this round, for distillation teachers.
pub(crate) fn train_base<T: Scalar>(
    spec: &BaseSpec,
    data: &StackData<T>,
    val: Option<&StackData<T>>,
    seed: u64,
    round: u64,
    earlier: &[BaseModel<T>],
) -> Result<TrainedBase<T>> {
    let seed = derive_seed(seed, &spec.name, round);
    let c = data.classes;
    let labels = match spec.corrupt_class {
        Some(k) if k < c && c > 1 => corrupt_labels(&data.labels, c, k, seed),
        Some(k) if k >= c => return Err(Error::LabelOutOfRange { label: k, classes: c }),
        _ => data.labels.clone(),
    };
    match &spec.model {
        BaseModelSpec::Classical { kind, train } => {
            let x = data.inputs.sparse.as_ref().ok_or_else(|| Error::Config("classical base needs sparse features".into()))?;
            let ts = TrainSpec { seed, ..train.clone() };
            Ok(TrainedBase { model: BaseModel::Classical(train_classical(*kind, x, &labels, c, &ts)?), curve: None })
        }
        BaseModelSpec::Transformer { config, train, pretrain } => {
            let cfg = config.clone().with_classes(c);
            let opts = TrainOptions { seed, ..train.clone() };
            let train_data = labeled_tokens(data, labels)?;
            let val_data = match val {
                Some(v) => Some(labeled_tokens(v, v.labels.clone())?),
                None => None,
            };
            let corpus = data.inputs.tokens.as_ref().expect("checked by labeled_tokens");
            let init: TransformerModel<T> = init_transformer(cfg.clone(), seed)?;
            let start = match pretrain {
                Pretraining::None => init,
                Pretraining::Mlm { masking, train } => mlm_pretrain(&init, corpus, masking, &TrainOptions { seed, ..train.clone() })?.0,
                Pretraining::Rtd { masking, train, generator_layers } => {
                    let gcfg = TransformerConfig { layers: *generator_layers, ..cfg.clone() };
                    let popts = TrainOptions { seed, ..train.clone() };
                    let generator: TransformerModel<T> = init_transformer(gcfg, seed ^ 1)?;
                    let (generator, _) = mlm_pretrain(&generator, corpus, masking, &popts)?;
                    rtd_pretrain(&generator, &init, corpus, masking, &popts)?.0
                }
                Pretraining::Distill { teacher, spec: dspec } => {
                    let Some(BaseModel::Transformer(t)) = earlier.get(*teacher) else {
                        return Err(Error::Config(format!("distillation teacher {teacher} is not an earlier transformer base")));
                    };
                    let (student, curve) = distill(t, &cfg, &train_data, val_data.as_ref(), dspec, &opts)?;
                    return Ok(TrainedBase { model: BaseModel::Transformer(student), curve: Some(curve) });
                }
            };
            let (model, curve) = train_classifier(&start, &train_data, val_data.as_ref(), &opts)?;
            Ok(TrainedBase { model: BaseModel::Transformer(model), curve: Some(curve) })
        }
    }
}
