use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{check_files, ExperimentConfig};
use super::report::{CurveRecord, ModelResult, ReportBundle, RunMetadata, SeedScore, STACK_ROW};
use crate::classical::{train_classical, ClassicalKind, ClassicalModel, TrainSpec};
use crate::corpus::{load_csv, split_indices, LabelMap, SplitIndices};
use crate::ensemble::{
    stack_train, train_base, BaseModel, BaseSpec, MetaSpec, Pretraining, StackData, StackInputs, StackSpec, StackedModel,
};
use crate::error::{Error, Result};
use crate::features::{SparseMatrix, TfidfModel};
use crate::metrics::{cce_loss, score};
use crate::neural::{preset, Lineage, LossCurve, Scale, TrainOptions, TransformerModel};
use crate::pretrain::{DistillSpec, MaskingSpec};
use crate::prob::ProbMatrix;
use crate::textprep::{Lexicon, Preprocessor};
use crate::tokenizer::{train_bpe, BpeModel, TokenSequence};

/// The dataset after loading and preprocessing, shared by every seed.
pub(crate) struct Corpus {
    pub docs: Vec<Vec<String>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub dropped: usize,
    split_source: crate::corpus::Dataset,
}

pub(crate) fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let d = &cfg.dataset;
    let loaded = load_csv(&d.path, &d.text_column, &d.label_column).map_err(|e| e.in_stage("load"))?;
    let map = LabelMap::from_labels(loaded.dataset.documents().iter().map(|doc| doc.label.as_str()));
    let labels = map.encode(&loaded.dataset).map_err(|e| e.in_stage("load"))?;
    let pre = Preprocessor::new(cfg.preprocess.clean_config().map_err(|e| e.in_stage("preprocess"))?, Lexicon::english().clone());
    let docs = loaded.dataset.texts().map(|t| pre.process(t)).collect();
    Ok(Corpus { docs, labels, class_names: map.names().to_vec(), dropped: loaded.dropped, split_source: loaded.dataset })
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// Per-seed artifacts produced by the `prep` stage.
pub(crate) struct Prepared {
    pub split: SplitIndices,
    pub tfidf: TfidfModel<f64>,
    pub tokenizer: Option<BpeModel>,
}

/// Documents the models are fit on: train plus validation. Validation rows
/// only drive the transformer curves, so the classical models see them too.
fn fit_rows(s: &SplitIndices) -> Vec<usize> {
    let mut rows: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
    rows.sort_unstable();
    rows
}

fn joined(corpus: &Corpus, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| corpus.docs[i].join(" ")).collect()
}

impl Prepared {
    fn sparse(&self, corpus: &Corpus, idx: &[usize]) -> SparseMatrix<f64> {
        let docs: Vec<Vec<String>> = idx.iter().map(|&i| corpus.docs[i].clone()).collect();
        self.tfidf.transform_all(&docs)
    }

    fn tokens(&self, corpus: &Corpus, idx: &[usize], max_len: usize) -> Option<Vec<TokenSequence>> {
        self.tokenizer.as_ref().map(|t| t.encode_batch(&joined(corpus, idx), max_len))
    }

    fn data(&self, cfg: &ExperimentConfig, corpus: &Corpus, idx: &[usize]) -> Result<StackData<f64>> {
        let inputs = StackInputs::new(Some(self.sparse(corpus, idx)), self.tokens(corpus, idx, cfg.tokenizer.max_len))?;
        StackData::new(inputs, idx.iter().map(|&i| corpus.labels[i]).collect(), corpus.class_names.len())
    }
}

/// Directory layout under `<output_dir>/artifacts`.
pub(crate) struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Artifacts { root: cfg.output_dir.join("artifacts") }
    }

    fn seed(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed_{seed}"))
    }

    fn bundle(&self) -> PathBuf {
        self.root.join("bundle.json")
    }

    fn mkdir(path: &Path) -> Result<()> {
        std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
    }

    fn write(path: &Path, text: &str) -> Result<()> {
        if let Some(p) = path.parent() {
            Self::mkdir(p)?;
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn read(path: &Path) -> Result<String> {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
    }

    fn record_times(&self, times: &BTreeMap<String, f64>) -> Result<()> {
        let path = self.root.join("timings.json");
        let mut all: BTreeMap<String, f64> = match std::fs::read_to_string(&path) {
            Ok(t) => serde_json::from_str(&t)?,
            Err(_) => BTreeMap::new(),
        };
        all.extend(times.iter().map(|(k, v)| (k.clone(), *v)));
        Self::write(&path, &serde_json::to_string_pretty(&all)?)
    }

    fn times(&self) -> BTreeMap<String, f64> {
        std::fs::read_to_string(self.root.join("timings.json")).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or_default()
    }

    /// Refuses artifacts written for a different experiment.
    fn check_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        let path = self.root.join("config.hash");
        let found = Self::read(&path).map_err(|_| Error::Config(format!("no prepared artifacts in {} (run prep first)", self.root.display())))?;
        if found.trim() != cfg.hash() {
            return Err(Error::Config(format!("artifacts in {} were prepared from a different config; rerun prep", self.root.display())));
        }
        Ok(())
    }

    fn load_prepared(&self, seed: u64) -> Result<Prepared> {
        let dir = self.seed(seed);
        let split: SplitFile = serde_json::from_str(&Self::read(&dir.join("split.json"))?)?;
        let tfidf = TfidfModel::load(dir.join("tfidf.txt"))?;
        let tok = dir.join("tokenizer.txt");
        let tokenizer = if tok.exists() { Some(BpeModel::load(&tok)?) } else { None };
        Ok(Prepared { split: SplitIndices { train: split.train, val: split.val, test: split.test }, tfidf, tokenizer })
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Splits, fits the vectorizer and the tokenizer for every seed.
pub fn prep_stage(cfg: &ExperimentConfig) -> Result<()> {
    check_files(cfg)?;
    let art = Artifacts::new(cfg);
    let corpus = load_corpus(cfg)?;
    let mut times = BTreeMap::new();
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let stage = |e: Error| e.in_stage(format!("prep (seed {seed})"));
        let split = split_indices(&corpus.split_source, cfg.split, seed).map_err(stage)?;
        let rows = fit_rows(&split);
        let docs: Vec<Vec<String>> = rows.iter().map(|&i| corpus.docs[i].clone()).collect();
        let tfidf: TfidfModel<f64> = TfidfModel::fit(&docs, cfg.features).map_err(stage)?;
        let dir = art.seed(seed);
        Artifacts::mkdir(&dir)?;
        let file = SplitFile { train: split.train, val: split.val, test: split.test };
        Artifacts::write(&dir.join("split.json"), &serde_json::to_string(&file)?)?;
        tfidf.save(dir.join("tfidf.txt"))?;
        let tok = dir.join("tokenizer.txt");
        if cfg.transformers.lineages.is_empty() {
            let _ = std::fs::remove_file(&tok);
        } else {
            let bpe = train_bpe(&joined(&corpus, &rows), cfg.tokenizer.vocab_size, cfg.tokenizer.mode).map_err(stage)?;
            bpe.save(&tok)?;
        }
        times.insert(format!("seed_{seed}/prep"), secs(start));
    }
    Artifacts::write(&art.root.join("config.hash"), &cfg.hash())?;
    Artifacts::write(&art.root.join("config.txt"), &cfg.normalized())?;
    art.record_times(&times)
}

fn error_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.error"))
}

/// Writes `result` to `ok` or its error to `<name>.error`, removing the stale one.
fn settle<F: FnOnce() -> Result<()>>(dir: &Path, name: &str, f: F) -> Result<()> {
    let err = error_file(dir, name);
    let _ = std::fs::remove_file(&err);
    if let Err(e) = f() {
        Artifacts::write(&err, &e.to_string())?;
    }
    Ok(())
}

/// Fits the classical baselines. Per-model failures are recorded and do not
/// stop the others.
pub fn train_stage(cfg: &ExperimentConfig) -> Result<()> {
    let art = Artifacts::new(cfg);
    art.check_config(cfg)?;
    if cfg.baselines.is_empty() {
        return Ok(());
    }
    let corpus = load_corpus(cfg)?;
    let mut times = BTreeMap::new();
    for &seed in &cfg.seeds {
        let prep = art.load_prepared(seed)?;
        let rows = fit_rows(&prep.split);
        let x = prep.sparse(&corpus, &rows);
        let y: Vec<usize> = rows.iter().map(|&i| corpus.labels[i]).collect();
        let dir = art.seed(seed).join("baselines");
        Artifacts::mkdir(&dir)?;
        for &kind in &cfg.baselines {
            let start = Instant::now();
            settle(&dir, kind.name(), || {
                let model = train_classical(kind, &x, &y, corpus.class_names.len(), &TrainSpec::for_kind(kind, seed))
                    .map_err(|e| e.in_stage(format!("train {kind} (seed {seed})")))?;
                model.save(dir.join(format!("{kind}.json")))
            })?;
            times.insert(format!("seed_{seed}/train/{kind}"), secs(start));
        }
    }
    art.record_times(&times)
}

fn pretraining(cfg: &ExperimentConfig, lineages: &[Lineage], i: usize) -> Pretraining {
    let l = lineages[i];
    if !cfg.pretrain.lineages.contains(&l) {
        return Pretraining::None;
    }
    let pt = &cfg.pretrain;
    let train = TrainOptions { epochs: pt.epochs, learning_rate: pt.learning_rate, batch_size: cfg.transformers.batch_size, ..Default::default() };
    let masking = MaskingSpec { mask_rate: pt.mask_rate, ..Default::default() };
    match l {
        Lineage::BertLike => Pretraining::Mlm { masking, train },
        Lineage::RobertaLike => Pretraining::Mlm { masking: MaskingSpec { mask_rate: pt.mask_rate, ..MaskingSpec::dynamic() }, train },
        Lineage::ElectraLike => Pretraining::Rtd { masking, train, generator_layers: pt.generator_layers },
        Lineage::DistilLike => match lineages[..i].iter().position(|&t| t != Lineage::DistilLike) {
            Some(teacher) => Pretraining::Distill { teacher, spec: DistillSpec { temperature: pt.temperature, ..Default::default() } },
            None => Pretraining::None,
        },
    }
}

/// Base specs of the transformer lineages, then (optionally) the classical ones.
pub(crate) fn base_specs(cfg: &ExperimentConfig, vocab: usize, with_classical: bool) -> Vec<BaseSpec> {
    let lineages = &cfg.transformers.lineages;
    let t = &cfg.transformers;
    let train = TrainOptions { epochs: t.epochs, learning_rate: t.learning_rate, batch_size: t.batch_size, ..Default::default() };
    let mut specs: Vec<BaseSpec> = lineages
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let model = preset(l, Scale::Desk).with_vocab(vocab).with_max_len(cfg.tokenizer.max_len);
            BaseSpec::transformer(l.name(), model, train.clone(), pretraining(cfg, lineages, i))
        })
        .collect();
    if with_classical {
        specs.extend(cfg.baselines.iter().map(|&k| BaseSpec::classical(k.name(), k)));
    }
    specs
}

fn uses_stack(cfg: &ExperimentConfig) -> bool {
    let classical = if cfg.stack.include_baselines { cfg.baselines.len() } else { 0 };
    cfg.stack.enabled && !cfg.transformers.lineages.is_empty() && cfg.transformers.lineages.len() + classical >= 2
}

fn meta_spec(cfg: &ExperimentConfig, seed: u64) -> MetaSpec {
    let base = match cfg.stack.meta {
        crate::ensemble::MetaKind::TransformerHead => MetaSpec::default(),
        crate::ensemble::MetaKind::Logistic => MetaSpec::logistic(),
    };
    let train = TrainOptions { epochs: cfg.stack.meta_epochs, learning_rate: cfg.stack.meta_learning_rate, seed, ..base.train.clone() };
    MetaSpec { train, ..base }
}

fn save_curve(dir: &Path, key: &str, curve: &LossCurve) -> Result<()> {
    Artifacts::mkdir(dir)?;
    curve.save_csv(dir.join(format!("{key}.csv")))
}

/// Trains the transformer lineages, stacked when more than one base is
/// available and stacking is on, standalone otherwise.
pub fn stack_stage(cfg: &ExperimentConfig) -> Result<()> {
    let art = Artifacts::new(cfg);
    art.check_config(cfg)?;
    if cfg.transformers.lineages.is_empty() {
        return Ok(());
    }
    let corpus = load_corpus(cfg)?;
    let mut times = BTreeMap::new();
    for &seed in &cfg.seeds {
        let prep = art.load_prepared(seed)?;
        let vocab = prep.tokenizer.as_ref().map(BpeModel::vocab_size).ok_or_else(|| Error::Config("tokenizer missing; rerun prep".into()))?;
        let train = prep.data(cfg, &corpus, &prep.split.train)?;
        let val = prep.data(cfg, &corpus, &prep.split.val)?;
        let dir = art.seed(seed).join("transformers");
        let curves = art.seed(seed).join("curves");
        Artifacts::mkdir(&dir)?;
        let start = Instant::now();
        if uses_stack(cfg) {
            let spec = StackSpec {
                bases: base_specs(cfg, vocab, cfg.stack.include_baselines),
                meta: meta_spec(cfg, crate::ensemble::derive_seed(seed, "meta", 0)),
                folds: cfg.stack.folds,
                seed,
                leaky: cfg.stack.leaky,
            };
            settle(&dir, "stack", || {
                let out = stack_train(&spec, &train, Some(&val)).map_err(|e| e.in_stage(format!("stack (seed {seed})")))?;
                if !spec.leaky && !out.audit.leak_free {
                    return Err(Error::Config(format!("leak audit failed (seed {seed})")));
                }
                let mut model = out.model;
                model.class_names = corpus.class_names.clone();
                model.save(dir.join("stack"))?;
                Artifacts::write(&dir.join("audit.json"), &serde_json::to_string(&out.audit)?)?;
                for (bs, c) in spec.bases.iter().zip(&out.base_curves) {
                    if let Some(c) = c {
                        save_curve(&curves, &bs.name, c)?;
                    }
                }
                save_curve(&curves, "meta", &out.meta_curve)
            })?;
            times.insert(format!("seed_{seed}/stack"), secs(start));
        } else {
            let mut earlier: Vec<BaseModel<f64>> = Vec::new();
            for spec in base_specs(cfg, vocab, false) {
                let start = Instant::now();
                let mut trained = None;
                settle(&dir, &spec.name, || {
                    let t = train_base(&spec, &train, Some(&val), seed, u64::MAX, &earlier)
                        .map_err(|e| e.in_stage(format!("train {} (seed {seed})", spec.name)))?;
                    let BaseModel::Transformer(m) = &t.model else { unreachable!("transformer spec") };
                    m.save(dir.join(format!("{}.bin", spec.name)))?;
                    if let Some(c) = &t.curve {
                        save_curve(&curves, &spec.name, c)?;
                    }
                    trained = Some(t.model);
                    Ok(())
                })?;
                // A failed base keeps its slot so teacher indices stay valid.
                earlier.push(trained.unwrap_or(BaseModel::Classical(ClassicalModel::linear(ClassicalKind::Lr, 2, 1, vec![0.0], vec![0.0])?)));
                times.insert(format!("seed_{seed}/train/{}", spec.name), secs(start));
            }
        }
    }
    art.record_times(&times)
}

fn seed_score(p: &ProbMatrix<f64>, y: &[usize], classes: usize, seed: u64) -> Result<SeedScore> {
    Ok(SeedScore { seed, scores: score(y, &p.predict(), classes)?, loss: cce_loss(p, y)?.value })
}

fn read_error(dir: &Path, name: &str) -> Option<String> {
    std::fs::read_to_string(error_file(dir, name)).ok()
}

fn record(row: &mut ModelResult, seed: u64, r: Result<SeedScore>) {
    match r {
        Ok(s) => row.seeds.push(s),
        Err(e) => row.fail(format!("seed {seed}: {e}")),
    }
}

/// Scores every trained model on each seed's test split and gathers curves.
pub fn evaluate_stage(cfg: &ExperimentConfig) -> Result<ReportBundle> {
    let art = Artifacts::new(cfg);
    art.check_config(cfg)?;
    let corpus = load_corpus(cfg)?;
    let classes = corpus.class_names.len();
    let mut baselines: Vec<ModelResult> = cfg.baselines.iter().map(|k| ModelResult::new(k.name(), k.name())).collect();
    let mut transformers: Vec<ModelResult> =
        cfg.transformers.lineages.iter().map(|l| ModelResult::new(l.model_name(), l.name())).collect();
    let stacked = uses_stack(cfg);
    if stacked {
        transformers.push(ModelResult::new(STACK_ROW, "meta"));
    }
    let mut curve_keys: Vec<String> = cfg.transformers.lineages.iter().map(|l| l.name().to_string()).collect();
    if stacked {
        curve_keys.push("meta".into());
    }
    let mut curves: Vec<CurveRecord> = curve_keys.iter().map(|k| CurveRecord { key: k.clone(), per_seed: Vec::new() }).collect();

    for &seed in &cfg.seeds {
        let prep = art.load_prepared(seed)?;
        let test = prep.data(cfg, &corpus, &prep.split.test).map_err(|e| e.in_stage(format!("evaluate (seed {seed})")))?;
        let y = &test.labels;
        let bdir = art.seed(seed).join("baselines");
        for (row, &kind) in baselines.iter_mut().zip(&cfg.baselines) {
            if let Some(e) = read_error(&bdir, kind.name()) {
                row.fail(format!("seed {seed}: {e}"));
                continue;
            }
            let r = ClassicalModel::<f64>::load(bdir.join(format!("{kind}.json")))
                .and_then(|m| m.predict_proba(test.inputs.sparse.as_ref().expect("sparse features are always built")))
                .and_then(|p| seed_score(&p, y, classes, seed));
            record(row, seed, r);
        }
        let tdir = art.seed(seed).join("transformers");
        if stacked {
            if let Some(e) = read_error(&tdir, "stack") {
                transformers.iter_mut().for_each(|r| r.fail(format!("seed {seed}: {e}")));
            } else {
                match StackedModel::<f64>::load(tdir.join("stack")).and_then(|m| Ok((m.base_predictions(&test.inputs)?, m))) {
                    Ok((preds, model)) => {
                        let n = cfg.transformers.lineages.len();
                        for (row, p) in transformers.iter_mut().zip(preds.iter().take(n)) {
                            record(row, seed, seed_score(p, y, classes, seed));
                        }
                        let meta = crate::ensemble::meta_features(&preds).and_then(|m| model.meta.predict_proba(&m));
                        record(&mut transformers[n], seed, meta.and_then(|p| seed_score(&p, y, classes, seed)));
                    }
                    Err(e) => transformers.iter_mut().for_each(|r| r.fail(format!("seed {seed}: {e}"))),
                }
            }
        } else {
            let tokens = test.inputs.tokens.clone().unwrap_or_default();
            let inputs = StackInputs { rows: tokens.len(), sparse: None, tokens: Some(tokens) };
            for (row, l) in transformers.iter_mut().zip(&cfg.transformers.lineages) {
                if let Some(e) = read_error(&tdir, l.name()) {
                    row.fail(format!("seed {seed}: {e}"));
                    continue;
                }
                let r = TransformerModel::<f64>::load(tdir.join(format!("{}.bin", l.name())))
                    .and_then(|m| BaseModel::Transformer(m).predict_proba(&inputs))
                    .and_then(|p| seed_score(&p, y, classes, seed));
                record(row, seed, r);
            }
        }
        let cdir = art.seed(seed).join("curves");
        for c in curves.iter_mut() {
            if let Ok(text) = std::fs::read_to_string(cdir.join(format!("{}.csv", c.key))) {
                c.per_seed.push((seed, LossCurve::from_csv(&text)?));
            }
        }
    }
    curves.retain(|c| c.per_seed.len() == cfg.seeds.len());

    let bundle = ReportBundle {
        metadata: RunMetadata {
            dataset: cfg.dataset.name.clone(),
            config_hash: cfg.hash(),
            seeds: cfg.seeds.clone(),
            class_names: corpus.class_names.clone(),
            documents: corpus.docs.len(),
            dropped_rows: corpus.dropped,
            leaky: cfg.stack.leaky && stacked,
            durations: art.times(),
        },
        baselines,
        transformers,
        curves,
    };
    bundle.save(art.bundle())?;
    Ok(bundle)
}

/// Loads the bundle written by the last `evaluate`.
pub fn load_bundle(cfg: &ExperimentConfig) -> Result<ReportBundle> {
    ReportBundle::load(Artifacts::new(cfg).bundle())
}

/// Every stage in order, persisting artifacts under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReportBundle> {
    prep_stage(cfg)?;
    train_stage(cfg)?;
    stack_stage(cfg)?;
    evaluate_stage(cfg)
}
