use std::path::Path;

use serde::{Deserialize, Serialize};

use super::base::{train_base, BaseModel, BaseModelSpec, BaseSpec};
use super::meta::{build_meta, MetaModel, MetaSpec};
use super::{meta_features, stratified_folds, MetaMatrix, StackData, StackInputs};
use crate::classical::ClassicalModel;
use crate::error::{Error, Result};
use crate::neural::{LossCurve, TransformerModel};
use crate::prob::ProbMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub bases: Vec<BaseSpec>,
    pub meta: MetaSpec,
    pub folds: usize,
    pub seed: u64,
    /// Build meta-features from bases trained on all of train (no folds).
    /// Reports must label results from this mode as leaky.
    pub leaky: bool,
}

impl StackSpec {
    pub fn new(bases: Vec<BaseSpec>, meta: MetaSpec) -> Self {
        StackSpec { bases, meta, folds: 5, seed: 0, leaky: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bases.len() < 2 {
            return Err(Error::Config("stacking needs at least two bases".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("stacking needs at least two folds".into()));
        }
        for (i, b) in self.bases.iter().enumerate() {
            if self.bases[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::Config(format!("duplicate base name `{}`", b.name)));
            }
        }
        Ok(())
    }
}

/// Record of which rows each base saw while producing meta-features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakAudit {
    /// Fold of every training row (all zero in leaky mode).
    pub fold_of: Vec<usize>,
    /// Out-of-fold predictions received by each row, per base.
    pub predictions_per_row: Vec<Vec<u32>>,
    /// Trainings per base, including the deployment training.
    pub trainings: Vec<usize>,
    /// True when every meta-feature row came from bases that never saw it.
    pub leak_free: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackedModel<T> {
    pub spec: StackSpec,
    pub classes: usize,
    pub class_names: Vec<String>,
    pub bases: Vec<BaseModel<T>>,
    pub meta: MetaModel<T>,
    pub fold_of: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct StackOutcome<T> {
    pub model: StackedModel<T>,
    /// Meta classifier loss per epoch.
    pub meta_curve: LossCurve,
    /// Deployment fine-tuning curves of transformer bases.
    pub base_curves: Vec<Option<LossCurve>>,
    pub audit: LeakAudit,
}

fn base_err(index: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Base { index, source: Box::new(e) }
}

fn train_round<T: Scalar>(
    spec: &StackSpec,
    train: &StackData<T>,
    val: Option<&StackData<T>>,
    round: u64,
) -> Result<Vec<super::base::TrainedBase<T>>> {
    let mut done: Vec<super::base::TrainedBase<T>> = Vec::with_capacity(spec.bases.len());
    for (b, bs) in spec.bases.iter().enumerate() {
        let earlier: Vec<BaseModel<T>> = done.iter().map(|t| t.model.clone()).collect();
        done.push(train_base(bs, train, val, spec.seed, round, &earlier).map_err(base_err(b))?);
    }
    Ok(done)
}

fn predict_all<T: Scalar>(bases: &[BaseModel<T>], inputs: &StackInputs<T>) -> Result<Vec<ProbMatrix<T>>> {
    bases.iter().enumerate().map(|(b, m)| m.predict_proba(inputs).map_err(base_err(b))).collect()
}

/// Out-of-fold stacking. Meta-features for the training rows come from
/// bases trained on the other folds; the bases are then retrained on all of
/// `train` for deployment and produce the validation meta-features.
pub fn stack_train<T: Scalar>(spec: &StackSpec, train: &StackData<T>, val: Option<&StackData<T>>) -> Result<StackOutcome<T>> {
    spec.validate()?;
    let (n, c, nb) = (train.len(), train.classes, spec.bases.len());
    if n == 0 {
        return Err(Error::InvalidDataset("empty training set".into()));
    }
    let mut audit = LeakAudit { fold_of: vec![0; n], predictions_per_row: vec![vec![0; n]; nb], trainings: vec![0; nb], leak_free: !spec.leaky };
    let mut oof = vec![vec![T::zero(); n * c]; nb];

    let deployed = if spec.leaky {
        let trained = train_round(spec, train, val, u64::MAX)?;
        let models: Vec<BaseModel<T>> = trained.iter().map(|t| t.model.clone()).collect();
        for (b, p) in predict_all(&models, &train.inputs)?.into_iter().enumerate() {
            oof[b] = p.into_vec();
            audit.predictions_per_row[b].iter_mut().for_each(|k| *k += 1);
            audit.trainings[b] += 1;
        }
        trained
    } else {
        let fold_of = stratified_folds(&train.labels, c, spec.folds, spec.seed)?;
        for f in 0..spec.folds {
            let fit_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let held: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            let trained = train_round(spec, &train.select(&fit_rows), None, f as u64)?;
            let models: Vec<BaseModel<T>> = trained.into_iter().map(|t| t.model).collect();
            let mut seen = vec![false; n];
            fit_rows.iter().for_each(|&i| seen[i] = true);
            let preds = predict_all(&models, &train.inputs.select(&held))?;
            for (b, p) in preds.iter().enumerate() {
                audit.trainings[b] += 1;
                for (k, &row) in held.iter().enumerate() {
                    if seen[row] {
                        return Err(Error::Leakage { row, base: b, fold: f });
                    }
                    oof[b][row * c..(row + 1) * c].copy_from_slice(p.row(k));
                    audit.predictions_per_row[b][row] += 1;
                }
            }
        }
        audit.fold_of = fold_of;
        train_round(spec, train, val, u64::MAX)?
    };
    for (b, counts) in audit.predictions_per_row.iter().enumerate() {
        if let Some(row) = counts.iter().position(|&k| k != 1) {
            return Err(Error::Leakage { row, base: b, fold: audit.fold_of[row] });
        }
    }
    audit.trainings.iter_mut().for_each(|t| *t += usize::from(!spec.leaky));

    let probs: Vec<ProbMatrix<T>> = oof.into_iter().map(|d| ProbMatrix::new(n, c, d)).collect::<Result<_>>()?;
    let meta_train = meta_features(&probs)?;
    let base_models: Vec<BaseModel<T>> = deployed.iter().map(|t| t.model.clone()).collect();
    let meta_val = match val {
        Some(v) => Some(meta_features(&predict_all(&base_models, &v.inputs)?)?),
        None => None,
    };
    let meta_spec = MetaSpec { train: crate::neural::TrainOptions { seed: super::derive_seed(spec.seed, "meta", 0), ..spec.meta.train.clone() }, ..spec.meta.clone() };
    let (meta, meta_curve) =
        build_meta(&meta_spec, &meta_train, &train.labels, meta_val.as_ref().zip(val.map(|v| v.labels.as_slice())))?;
    let model = StackedModel {
        spec: spec.clone(),
        classes: c,
        class_names: (0..c).map(|k| k.to_string()).collect(),
        bases: base_models,
        meta,
        fold_of: audit.fold_of.clone(),
    };
    Ok(StackOutcome { model, meta_curve, base_curves: deployed.into_iter().map(|t| t.curve).collect(), audit })
}

impl<T: Scalar> StackedModel<T> {
    pub fn base_predictions(&self, inputs: &StackInputs<T>) -> Result<Vec<ProbMatrix<T>>> {
        predict_all(&self.bases, inputs)
    }

    pub fn meta_matrix(&self, inputs: &StackInputs<T>) -> Result<MetaMatrix<T>> {
        meta_features(&self.base_predictions(inputs)?)
    }

    pub fn predict_proba(&self, inputs: &StackInputs<T>) -> Result<ProbMatrix<T>> {
        self.meta.predict_proba(&self.meta_matrix(inputs)?)
    }

    pub fn predict(&self, inputs: &StackInputs<T>) -> Result<Vec<usize>> {
        Ok(self.predict_proba(inputs)?.predict())
    }
}

/// Bases predict, their probabilities are concatenated and the meta model
/// produces the fused distribution.
pub fn stack_predict<T: Scalar>(m: &StackedModel<T>, batch: &StackInputs<T>) -> Result<ProbMatrix<T>> {
    m.predict_proba(batch)
}

const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    spec: StackSpec,
    classes: usize,
    class_names: Vec<String>,
    fold_of: Vec<usize>,
    bases: Vec<String>,
    meta: String,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

impl<T: Scalar> StackedModel<T> {
    /// Writes `manifest.json`, one file per base and one for the meta model.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        for (b, m) in self.bases.iter().enumerate() {
            let name = match m {
                BaseModel::Classical(c) => {
                    let f = format!("base_{b:02}.json");
                    write(&dir.join(&f), c.to_json().as_bytes())?;
                    f
                }
                BaseModel::Transformer(t) => {
                    let f = format!("base_{b:02}.bin");
                    t.save(dir.join(&f))?;
                    f
                }
            };
            files.push(name);
        }
        let meta = match &self.meta {
            MetaModel::Transformer(t) => {
                t.save(dir.join("meta.bin"))?;
                "meta.bin"
            }
            MetaModel::Logistic(c) => {
                write(&dir.join("meta.json"), c.to_json().as_bytes())?;
                "meta.json"
            }
        };
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            spec: self.spec.clone(),
            classes: self.classes,
            class_names: self.class_names.clone(),
            fold_of: self.fold_of.clone(),
            bases: files,
            meta: meta.into(),
        };
        write(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_slice(&read(&dir.join("manifest.json"))?)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported stack manifest version {}", manifest.version)));
        }
        if manifest.bases.len() != manifest.spec.bases.len() {
            return Err(Error::Format("manifest base list does not match its spec".into()));
        }
        let mut bases = Vec::new();
        for (file, bs) in manifest.bases.iter().zip(&manifest.spec.bases) {
            let path = dir.join(file);
            bases.push(match bs.model {
                BaseModelSpec::Classical { .. } => {
                    BaseModel::Classical(ClassicalModel::from_json(&String::from_utf8_lossy(&read(&path)?))?)
                }
                BaseModelSpec::Transformer { .. } => BaseModel::Transformer(TransformerModel::load(&path)?),
            });
        }
        let path = dir.join(&manifest.meta);
        let meta = if manifest.meta.ends_with(".bin") {
            MetaModel::Transformer(TransformerModel::load(&path)?)
        } else {
            MetaModel::Logistic(ClassicalModel::from_json(&String::from_utf8_lossy(&read(&path)?))?)
        };
        Ok(StackedModel {
            spec: manifest.spec,
            classes: manifest.classes,
            class_names: manifest.class_names,
            bases,
            meta,
            fold_of: manifest.fold_of,
        })
    }
}
