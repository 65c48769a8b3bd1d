use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classical::ClassicalKind;
use crate::corpus::SplitRatios;
use crate::ensemble::MetaKind;
use crate::error::{Error, Result};
use crate::features::{Norm, TfidfConfig};
use crate::neural::Lineage;
use crate::textprep::CleanConfig;
use crate::tokenizer::BpeMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub text_column: String,
    pub label_column: String,
    /// Shown in report captions; defaults to the file stem.
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub lowercase: bool,
    pub strip_urls: bool,
    pub strip_handles: bool,
    pub strip_numbers: bool,
    pub strip_symbols: bool,
    pub stopwords: bool,
    /// Replaces the bundled stopword list.
    pub stopword_file: Option<PathBuf>,
}

impl PreprocessConfig {
    pub fn clean_config(&self) -> Result<CleanConfig> {
        let mut c = CleanConfig::default();
        c.lowercase = self.lowercase;
        c.strip_urls = self.strip_urls;
        c.strip_handles = self.strip_handles;
        c.strip_numbers = self.strip_numbers;
        c.strip_symbols = self.strip_symbols;
        if !self.stopwords {
            return c.with_stopwords(Vec::<String>::new());
        }
        match &self.stopword_file {
            Some(p) => c.with_stopword_file(p),
            None => Ok(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub mode: BpeMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerSettings {
    pub lineages: Vec<Lineage>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSettings {
    /// Lineages that run their pretraining objective before fine-tuning.
    pub lineages: Vec<Lineage>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub mask_rate: f64,
    pub generator_layers: usize,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackSettings {
    pub enabled: bool,
    pub folds: usize,
    pub meta: MetaKind,
    pub meta_epochs: usize,
    pub meta_learning_rate: f64,
    pub leaky: bool,
    /// Also feed the classical baselines into the stack.
    pub include_baselines: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessConfig,
    pub features: TfidfConfig,
    pub tokenizer: TokenizerConfig,
    pub baselines: Vec<ClassicalKind>,
    pub transformers: TransformerSettings,
    pub pretrain: PretrainSettings,
    pub stack: StackSettings,
    pub split: SplitRatios,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig { path: PathBuf::new(), text_column: "text".into(), label_column: "label".into(), name: String::new() },
            preprocess: PreprocessConfig {
                lowercase: true,
                strip_urls: true,
                strip_handles: true,
                strip_numbers: true,
                strip_symbols: true,
                stopwords: true,
                stopword_file: None,
            },
            features: TfidfConfig::default(),
            tokenizer: TokenizerConfig { vocab_size: 1000, max_len: 64, mode: BpeMode::Char },
            baselines: Vec::new(),
            transformers: TransformerSettings { lineages: Vec::new(), epochs: 10, learning_rate: 3e-4, batch_size: 32 },
            pretrain: PretrainSettings {
                lineages: Lineage::ALL.to_vec(),
                epochs: 3,
                learning_rate: 1e-3,
                mask_rate: 0.15,
                generator_layers: 1,
                temperature: 2.0,
            },
            stack: StackSettings {
                enabled: true,
                folds: 5,
                meta: MetaKind::TransformerHead,
                meta_epochs: 30,
                meta_learning_rate: 3e-3,
                leaky: false,
                include_baselines: false,
            },
            split: SplitRatios::default(),
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: PathBuf::from("results"),
        }
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

fn path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn bad(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got `{v}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, format!("expected a number, got `{v}`")))
}

fn parse_list<T: std::str::FromStr<Err = Error>>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() || v.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| s.trim().parse::<T>().map_err(|e| bad(key, e))).collect()
}

fn parse_seeds(key: &str, v: &str) -> Result<Vec<u64>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && !v.eq_ignore_ascii_case("none")).then(|| PathBuf::from(v))
}

impl ExperimentConfig {
    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (d, p, s, t, pt) = (&self.dataset, &self.preprocess, &self.stack, &self.transformers, &self.pretrain);
        vec![
            ("dataset.path", path(&d.path)),
            ("dataset.text_column", d.text_column.clone()),
            ("dataset.label_column", d.label_column.clone()),
            ("dataset.name", d.name.clone()),
            ("preprocess.lowercase", p.lowercase.to_string()),
            ("preprocess.strip_urls", p.strip_urls.to_string()),
            ("preprocess.strip_handles", p.strip_handles.to_string()),
            ("preprocess.strip_numbers", p.strip_numbers.to_string()),
            ("preprocess.strip_symbols", p.strip_symbols.to_string()),
            ("preprocess.stopwords", p.stopwords.to_string()),
            ("preprocess.stopword_file", p.stopword_file.as_deref().map(path).unwrap_or_else(|| "none".into())),
            ("features.min_df", self.features.min_df.to_string()),
            ("features.norm", self.features.norm.to_string()),
            ("features.bigrams", self.features.bigrams.to_string()),
            ("tokenizer.vocab_size", self.tokenizer.vocab_size.to_string()),
            ("tokenizer.max_len", self.tokenizer.max_len.to_string()),
            ("tokenizer.mode", self.tokenizer.mode.to_string()),
            ("baselines.models", if self.baselines.is_empty() { "none".into() } else { join(&self.baselines) }),
            ("transformers.models", if t.lineages.is_empty() { "none".into() } else { join(&t.lineages) }),
            ("transformers.epochs", t.epochs.to_string()),
            ("transformers.learning_rate", float(t.learning_rate)),
            ("transformers.batch_size", t.batch_size.to_string()),
            ("pretrain.models", if pt.lineages.is_empty() { "none".into() } else { join(&pt.lineages) }),
            ("pretrain.epochs", pt.epochs.to_string()),
            ("pretrain.learning_rate", float(pt.learning_rate)),
            ("pretrain.mask_rate", float(pt.mask_rate)),
            ("pretrain.generator_layers", pt.generator_layers.to_string()),
            ("pretrain.temperature", float(pt.temperature)),
            ("stack.enabled", s.enabled.to_string()),
            ("stack.folds", s.folds.to_string()),
            ("stack.meta", s.meta.to_string()),
            ("stack.meta_epochs", s.meta_epochs.to_string()),
            ("stack.meta_learning_rate", float(s.meta_learning_rate)),
            ("stack.leaky", s.leaky.to_string()),
            ("stack.include_baselines", s.include_baselines.to_string()),
            ("split.train", float(self.split.train)),
            ("split.val", float(self.split.val)),
            ("split.test", float(self.split.test)),
            ("run.seeds", join(&self.seeds)),
            ("run.output_dir", path(&self.output_dir)),
        ]
    }

    /// All accepted keys.
    pub fn keys() -> Vec<&'static str> {
        ExperimentConfig::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset.path" => self.dataset.path = PathBuf::from(v),
            "dataset.text_column" => self.dataset.text_column = v.into(),
            "dataset.label_column" => self.dataset.label_column = v.into(),
            "dataset.name" => self.dataset.name = v.into(),
            "preprocess.lowercase" => self.preprocess.lowercase = parse_bool(key, v)?,
            "preprocess.strip_urls" => self.preprocess.strip_urls = parse_bool(key, v)?,
            "preprocess.strip_handles" => self.preprocess.strip_handles = parse_bool(key, v)?,
            "preprocess.strip_numbers" => self.preprocess.strip_numbers = parse_bool(key, v)?,
            "preprocess.strip_symbols" => self.preprocess.strip_symbols = parse_bool(key, v)?,
            "preprocess.stopwords" => self.preprocess.stopwords = parse_bool(key, v)?,
            "preprocess.stopword_file" => self.preprocess.stopword_file = opt_path(v),
            "features.min_df" => self.features.min_df = parse_num(key, v)?,
            "features.norm" => self.features.norm = v.parse::<Norm>().map_err(|e| bad(key, e))?,
            "features.bigrams" => self.features.bigrams = parse_bool(key, v)?,
            "tokenizer.vocab_size" => self.tokenizer.vocab_size = parse_num(key, v)?,
            "tokenizer.max_len" => self.tokenizer.max_len = parse_num(key, v)?,
            "tokenizer.mode" => self.tokenizer.mode = v.parse::<BpeMode>().map_err(|e| bad(key, e))?,
            "baselines.models" => self.baselines = parse_list(key, v)?,
            "transformers.models" => self.transformers.lineages = parse_list(key, v)?,
            "transformers.epochs" => self.transformers.epochs = parse_num(key, v)?,
            "transformers.learning_rate" => self.transformers.learning_rate = parse_num(key, v)?,
            "transformers.batch_size" => self.transformers.batch_size = parse_num(key, v)?,
            "pretrain.models" => self.pretrain.lineages = parse_list(key, v)?,
            "pretrain.epochs" => self.pretrain.epochs = parse_num(key, v)?,
            "pretrain.learning_rate" => self.pretrain.learning_rate = parse_num(key, v)?,
            "pretrain.mask_rate" => self.pretrain.mask_rate = parse_num(key, v)?,
            "pretrain.generator_layers" => self.pretrain.generator_layers = parse_num(key, v)?,
            "pretrain.temperature" => self.pretrain.temperature = parse_num(key, v)?,
            "stack.enabled" => self.stack.enabled = parse_bool(key, v)?,
            "stack.folds" => self.stack.folds = parse_num(key, v)?,
            "stack.meta" => self.stack.meta = v.parse::<MetaKind>().map_err(|e| bad(key, e))?,
            "stack.meta_epochs" => self.stack.meta_epochs = parse_num(key, v)?,
            "stack.meta_learning_rate" => self.stack.meta_learning_rate = parse_num(key, v)?,
            "stack.leaky" => self.stack.leaky = parse_bool(key, v)?,
            "stack.include_baselines" => self.stack.include_baselines = parse_bool(key, v)?,
            "split.train" => self.split.train = parse_num(key, v)?,
            "split.val" => self.split.val = parse_num(key, v)?,
            "split.test" => self.split.test = parse_num(key, v)?,
            "run.seeds" => self.seeds = parse_seeds(key, v)?,
            "run.output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    /// Parses config text without touching the filesystem. Relative paths
    /// stay as written.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeMap::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)));
            };
            let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
            if let Some(prev) = seen.insert(key.clone(), n + 1) {
                return Err(bad(&key, format!("set twice (lines {prev} and {})", n + 1)));
            }
            cfg.set(&key, v.trim())?;
        }
        if cfg.dataset.name.is_empty() {
            cfg.dataset.name = cfg.dataset.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        }
        Ok(cfg)
    }

    /// Checks values that do not need the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.dataset.path.as_os_str().is_empty() {
            return Err(bad("dataset.path", "required"));
        }
        if self.baselines.is_empty() && self.transformers.lineages.is_empty() {
            return Err(Error::Config("no models requested (set baselines.models or transformers.models)".into()));
        }
        for (key, list) in [("baselines.models", join(&self.baselines)), ("transformers.models", join(&self.transformers.lineages))] {
            let items: Vec<&str> = list.split(", ").filter(|s| !s.is_empty()).collect();
            if let Some(d) = items.iter().enumerate().find(|(i, s)| items[..*i].contains(s)) {
                return Err(bad(key, format!("`{}` listed twice", d.1)));
            }
        }
        if self.seeds.is_empty() {
            return Err(bad("run.seeds", "at least one seed is required"));
        }
        self.split.validate().map_err(|e| bad("split", e))?;
        let positive = [
            ("features.min_df", self.features.min_df),
            ("tokenizer.max_len", self.tokenizer.max_len),
            ("transformers.epochs", self.transformers.epochs),
            ("transformers.batch_size", self.transformers.batch_size),
            ("pretrain.epochs", self.pretrain.epochs),
            ("pretrain.generator_layers", self.pretrain.generator_layers),
            ("stack.meta_epochs", self.stack.meta_epochs),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(bad(k, "must be positive"));
        }
        if self.tokenizer.max_len < 2 {
            return Err(bad("tokenizer.max_len", "must leave room for the start token"));
        }
        if self.stack.folds < 2 {
            return Err(bad("stack.folds", "must be at least 2"));
        }
        let rates = [
            ("transformers.learning_rate", self.transformers.learning_rate),
            ("pretrain.learning_rate", self.pretrain.learning_rate),
            ("pretrain.temperature", self.pretrain.temperature),
            ("stack.meta_learning_rate", self.stack.meta_learning_rate),
        ];
        if let Some((k, v)) = rates.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(bad(k, format!("must be positive, got {v}")));
        }
        if !(self.pretrain.mask_rate > 0.0 && self.pretrain.mask_rate <= 1.0) {
            return Err(bad("pretrain.mask_rate", "must lie in (0, 1]"));
        }
        let lineages = &self.transformers.lineages;
        if let Some(pos) = lineages.iter().position(|&l| l == Lineage::DistilLike) {
            if self.pretrain.lineages.contains(&Lineage::DistilLike) && !lineages[..pos].iter().any(|&l| l != Lineage::DistilLike) {
                return Err(bad("transformers.models", "distil-like distills from a teacher, so list another lineage before it"));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` text with every default filled in.
    pub fn normalized(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the normalized text, hex encoded. The output directory is
    /// left out so a rerun elsewhere keeps its identity.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries().into_iter().filter(|(k, _)| *k != "run.output_dir") {
            h.update(format!("{k} = {v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn unknown_key(key: &str) -> Error {
    let suggestion = ExperimentConfig::keys()
        .into_iter()
        .map(|k| {
            // Compare the leaf too, so a typo in a key given under the wrong
            // section still finds its match.
            let leaf = k.rsplit('.').next().unwrap_or(k);
            let given = key.rsplit('.').next().unwrap_or(key);
            let score = strsim::normalized_damerau_levenshtein(key, k).max(strsim::normalized_damerau_levenshtein(given, leaf) - 0.05);
            (score, k)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .filter(|(s, _)| *s >= 0.5)
        .map(|(_, k)| k.to_string());
    Error::UnknownKey { key: key.into(), suggestion }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads, defaults and checks a config file. Relative paths are resolved
/// against the file's directory.
pub fn validate_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let cfg = read_config(path)?;
    check_files(&cfg)?;
    Ok(cfg)
}

/// Like [`validate_config`] but leaves the file checks to the caller, so
/// overrides can be applied first.
pub fn read_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    cfg.dataset.path = resolve(base, &cfg.dataset.path);
    cfg.preprocess.stopword_file = cfg.preprocess.stopword_file.map(|p| resolve(base, &p));
    cfg.output_dir = resolve(base, &cfg.output_dir);
    Ok(cfg)
}

/// Full validation, including the files the config points at.
pub fn check_files(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    if !cfg.dataset.path.is_file() {
        return Err(bad("dataset.path", format!("{} does not exist", cfg.dataset.path.display())));
    }
    if let Some(p) = &cfg.preprocess.stopword_file {
        if !p.is_file() {
            return Err(bad("preprocess.stopword_file", format!("{} does not exist", p.display())));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_minimal(dir: &Path) -> PathBuf {
        std::fs::write(dir.join("d.csv"), "text,label\nhello,a\nworld,b\n").unwrap();
        let cfg = dir.join("exp.cfg");
        std::fs::write(&cfg, "# minimal\ndataset.path = d.csv\nbaselines.models = LSVM\n").unwrap();
        cfg
    }

    #[test]
    fn minimal_config_is_fully_defaulted() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = validate_config(write_minimal(dir.path())).unwrap();
        assert_eq!(cfg.baselines, vec![ClassicalKind::Lsvm]);
        assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.dataset.name, "d");
        assert_eq!(cfg.dataset.path, dir.path().join("d.csv"));
        assert_eq!(cfg.split, SplitRatios::default());
        assert!(cfg.transformers.lineages.is_empty());
        assert_eq!(cfg.entries().len(), ExperimentConfig::keys().len());
    }

    #[test]
    fn unknown_key_names_nearest() {
        let err = ExperimentConfig::parse("transformers.learnig_rate = 0.1").unwrap_err();
        match err {
            Error::UnknownKey { key, suggestion } => {
                assert_eq!(key, "transformers.learnig_rate");
                assert_eq!(suggestion.as_deref(), Some("transformers.learning_rate"));
            }
            e => panic!("{e}"),
        }
        let err = ExperimentConfig::parse("[pretrain]\nlearnig_rate = 0.1").unwrap_err();
        assert!(matches!(err, Error::UnknownKey { suggestion: Some(s), .. } if s == "pretrain.learning_rate"));
        let err = ExperimentConfig::parse("learnig_rate = 0.1").unwrap_err();
        assert!(err.to_string().contains("learnig_rate"));
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn same_file_twice_same_hash() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_minimal(dir.path());
        assert_eq!(validate_config(&p).unwrap().hash(), validate_config(&p).unwrap().hash());
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = ExperimentConfig::parse("dataset.path = x.csv\nbaselines.models = LSVM,PAC").unwrap();
        let b = ExperimentConfig::parse("# c\n[dataset]\npath=x.csv   # trailing\n[baselines]\nmodels = LSVM , PAC\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse("dataset.path = x.csv\nbaselines.models = PAC,LSVM").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn errors_carry_key_path() {
        let e = ExperimentConfig::parse("stack.meta = forest").unwrap_err().to_string();
        assert!(e.contains("stack.meta"), "{e}");
        let e = ExperimentConfig::parse("transformers.models = gpt-like").unwrap_err().to_string();
        assert!(e.contains("transformers.models"), "{e}");
        let e = ExperimentConfig::parse("stack.leaky = maybe").unwrap_err().to_string();
        assert!(e.contains("stack.leaky"), "{e}");
        let e = ExperimentConfig::parse("a.b = 1\na.b = 2").unwrap_err().to_string();
        assert!(e.contains("a.b"), "{e}");
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "dataset.path = nope.csv\nbaselines.models = LR\n").unwrap();
        assert!(validate_config(&p).unwrap_err().to_string().contains("dataset.path"));
        std::fs::write(dir.path().join("d.csv"), "text,label\n").unwrap();
        std::fs::write(&p, "dataset.path = d.csv\nbaselines.models = LR\npreprocess.stopword_file = s.txt\n").unwrap();
        assert!(validate_config(&p).unwrap_err().to_string().contains("preprocess.stopword_file"));
    }

    #[test]
    fn needs_a_model_and_a_teacher() {
        let e = ExperimentConfig::parse("dataset.path = x.csv").unwrap().validate().unwrap_err();
        assert!(e.to_string().contains("no models"));
        let c = ExperimentConfig::parse("dataset.path = x.csv\ntransformers.models = distil-like, bert-like").unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::parse("dataset.path = x.csv\ntransformers.models = bert-like, distil-like").unwrap();
        c.validate().unwrap();
        let c = ExperimentConfig::parse("dataset.path = x.csv\ntransformers.models = distil-like\npretrain.models = none").unwrap();
        c.validate().unwrap();
    }

    proptest! {
        #[test]
        fn normalized_form_round_trips(
            seeds in proptest::collection::vec(0u64..1000, 1..5),
            folds in 2usize..10,
            lr in 1e-6f64..1.0,
            leaky: bool,
            kinds in proptest::sample::subsequence(ClassicalKind::ALL.to_vec(), 0..=6),
        ) {
            let mut cfg = ExperimentConfig::default();
            cfg.dataset.path = "data/x.csv".into();
            cfg.dataset.name = "x".into();
            cfg.seeds = seeds;
            cfg.stack.folds = folds;
            cfg.transformers.learning_rate = lr;
            cfg.stack.leaky = leaky;
            cfg.baselines = kinds;
            let back = ExperimentConfig::parse(&cfg.normalized()).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.hash(), cfg.hash());
        }
    }
}
