//! Labeled review datasets: CSV ingestion, label encoding and stratified
//! train/validation/test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One review and its class name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDocument {
    pub text: String,
    pub label: String,
}

impl LabeledDocument {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Result<Self> {
        let doc = LabeledDocument { text: text.into(), label: label.into() };
        if doc.text.trim().is_empty() {
            return Err(Error::InvalidDataset("document text is empty".into()));
        }
        if doc.label.trim().is_empty() {
            return Err(Error::InvalidDataset("document label is empty".into()));
        }
        Ok(doc)
    }
}

/// An ordered, named collection of documents with at least two labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    name: String,
    documents: Vec<LabeledDocument>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, documents: Vec<LabeledDocument>) -> Result<Self> {
        let labels: BTreeSet<&str> = documents.iter().map(|d| d.label.as_str()).collect();
        if labels.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 distinct labels, found {}",
                labels.len()
            )));
        }
        Ok(Dataset { name: name.into(), documents })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn documents(&self) -> &[LabeledDocument] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.text.as_str())
    }

    /// Subset with the given indices, in ascending index order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        Dataset {
            name: name.into(),
            documents: idx.into_iter().map(|i| self.documents[i].clone()).collect(),
        }
    }
}

/// Result of [`load_csv`]: the dataset and how many rows were skipped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub dropped: usize,
}

/// Reads a UTF-8 CSV with a header row. Rows with blank text or label are
/// dropped and counted.
pub fn load_csv(path: impl AsRef<Path>, text_column: &str, label_column: &str) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv { path: path.to_path_buf(), message: e.to_string() };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let find = |col: &str| {
        headers
            .iter()
            .position(|h| h.trim() == col)
            .ok_or_else(|| Error::MissingColumn { path: path.to_path_buf(), column: col.to_string() })
    };
    let text_idx = find(text_column)?;
    let label_idx = find(label_column)?;

    let mut documents = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let text = record.get(text_idx).unwrap_or("");
        let label = record.get(label_idx).unwrap_or("").trim();
        if text.trim().is_empty() || label.is_empty() {
            dropped += 1;
            continue;
        }
        documents.push(LabeledDocument { text: text.to_string(), label: label.to_string() });
    }
    if documents.is_empty() {
        return Err(Error::ZeroUsableRows(path.to_path_buf()));
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(LoadedDataset { dataset: Dataset::new(name, documents)?, dropped })
}

/// Bijection between class names and ids `0..C`, ordered lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = labels.into_iter().collect();
        LabelMap { names: set.into_iter().map(str::to_string).collect() }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Encodes a dataset; fails on labels missing from the map.
    pub fn encode(&self, d: &Dataset) -> Result<Vec<usize>> {
        d.documents
            .iter()
            .map(|doc| {
                self.id(&doc.label)
                    .ok_or_else(|| Error::InvalidDataset(format!("label `{}` not in label map", doc.label)))
            })
            .collect()
    }
}

/// Lexicographic label ids and the encoded label vector.
pub fn encode_labels(d: &Dataset) -> (LabelMap, Vec<usize>) {
    let map = LabelMap::from_labels(d.documents.iter().map(|doc| doc.label.as_str()));
    let ids = map.encode(d).expect("map built from the same dataset");
    (map, ids)
}

/// Per-label document counts (observed labels only).
pub fn class_distribution(d: &Dataset) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for doc in &d.documents {
        *counts.entry(doc.label.clone()).or_insert(0) += 1;
    }
    counts
}

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| p.is_nan() || p <= 0.0 || !p.is_finite()) {
            return Err(Error::InvalidSplit("every ratio must be positive".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit("ratios must sum to 1".into()));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

/// Index sets of a three-way split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder apportionment of `total` by `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    out
}

/// Integer `classes × parts` allocation with given row and column sums where
/// every cell is the floor or ceiling of its proportional target.
fn controlled_rounding(class_sizes: &[usize], part_sizes: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = class_sizes.iter().sum();
    let mut cells: Vec<Vec<usize>> = class_sizes
        .iter()
        .map(|&nc| part_sizes.iter().map(|&ns| nc * ns / total).collect())
        .collect();
    let mut row_need: Vec<usize> =
        class_sizes.iter().zip(&cells).map(|(&nc, row)| nc - row.iter().sum::<usize>()).collect();
    let mut col_need: Vec<usize> = part_sizes
        .iter()
        .enumerate()
        .map(|(s, &ns)| ns - cells.iter().map(|row| row[s]).sum::<usize>())
        .collect();
    // Constructive Gale–Ryser: rows with the largest deficit first, each
    // taking at most one extra unit from the columns with the largest deficit.
    let mut rows: Vec<usize> = (0..class_sizes.len()).collect();
    rows.sort_by(|&a, &b| row_need[b].cmp(&row_need[a]).then(a.cmp(&b)));
    for c in rows {
        let mut cols: Vec<usize> = (0..part_sizes.len()).collect();
        cols.sort_by(|&a, &b| col_need[b].cmp(&col_need[a]).then(a.cmp(&b)));
        for &s in cols.iter().take(row_need[c]) {
            if col_need[s] > 0 {
                cells[c][s] += 1;
                col_need[s] -= 1;
                row_need[c] -= 1;
            }
        }
    }
    debug_assert!(row_need.iter().all(|&r| r == 0) && col_need.iter().all(|&c| c == 0));
    cells
}

/// Stratified split into index sets; deterministic per seed.
pub fn split_indices(d: &Dataset, ratios: SplitRatios, seed: u64) -> Result<SplitIndices> {
    ratios.validate()?;
    let parts = ratios.as_array();
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, doc) in d.documents.iter().enumerate() {
        by_class.entry(doc.label.as_str()).or_default().push(i);
    }
    if let Some((label, idx)) = by_class.iter().find(|(_, idx)| idx.len() < parts.len()) {
        return Err(Error::InvalidSplit(format!(
            "class `{label}` has {} documents, fewer than the {} split parts",
            idx.len(),
            parts.len()
        )));
    }
    let part_sizes = apportion(d.len(), &parts);
    let class_sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
    let alloc = controlled_rounding(&class_sizes, &part_sizes);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for (idx, counts) in by_class.into_values().zip(alloc) {
        let mut idx = idx;
        idx.shuffle(&mut rng);
        let mut start = 0;
        for (s, &n) in counts.iter().enumerate() {
            out[s].extend_from_slice(&idx[start..start + n]);
            start += n;
        }
    }
    for part in out.iter_mut() {
        part.sort_unstable();
    }
    let [train, val, test] = out;
    Ok(SplitIndices { train, val, test })
}

/// Stratified train/validation/test datasets.
pub fn split(d: &Dataset, ratios: SplitRatios, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = split_indices(d, ratios, seed)?;
    Ok((
        d.subset(format!("{}-train", d.name), &idx.train),
        d.subset(format!("{}-val", d.name), &idx.val),
        d.subset(format!("{}-test", d.name), &idx.test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn docs(labels: &[&str]) -> Dataset {
        let documents = labels
            .iter()
            .enumerate()
            .map(|(i, l)| LabeledDocument::new(format!("doc {i}"), *l).unwrap())
            .collect();
        Dataset::new("fixture", documents).unwrap()
    }

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn blank_rows_are_dropped_and_counted() {
        let f = write_csv("text,label\ngood app,pos\n   ,neg\n\"bad, slow\",neg\n");
        let loaded = load_csv(f.path(), "text", "label").unwrap();
        assert_eq!(loaded.dataset.len(), 2);
        assert_eq!(loaded.dropped, 1);
        assert_eq!(loaded.dataset.documents()[1].text, "bad, slow");
    }

    #[test]
    fn load_errors() {
        let header_only = write_csv("text,label\n");
        assert!(matches!(load_csv(header_only.path(), "text", "label"), Err(Error::ZeroUsableRows(_))));
        let f = write_csv("body,label\nx,a\n");
        assert!(matches!(load_csv(f.path(), "text", "label"), Err(Error::MissingColumn { .. })));
        assert!(matches!(load_csv("/nonexistent/file.csv", "text", "label"), Err(Error::Io { .. })));
        let bad = write_csv("text,label\nx,a,extra\n");
        assert!(matches!(load_csv(bad.path(), "text", "label"), Err(Error::Csv { .. })));
        let single = write_csv("text,label\nx,a\ny,a\n");
        assert!(matches!(load_csv(single.path(), "text", "label"), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn loading_is_idempotent() {
        let f = write_csv("label,text\npos,\"a \"\"quoted\"\" word\"\nneg,b\n");
        let a = load_csv(f.path(), "text", "label").unwrap();
        let b = load_csv(f.path(), "text", "label").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dataset.documents()[0].text, "a \"quoted\" word");
    }

    #[test]
    fn labels_are_lexicographic() {
        let d = docs(&["pos", "neg", "neu", "pos"]);
        let (map, ids) = encode_labels(&d);
        assert_eq!(map.names(), &["neg", "neu", "pos"]);
        assert_eq!(ids, vec![2, 0, 1, 2]);
        let (map, _) = encode_labels(&docs(&["truthful", "deceptive"]));
        assert_eq!(map.id("deceptive"), Some(0));
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn single_label_dataset_is_rejected() {
        let documents = vec![LabeledDocument::new("x", "a").unwrap()];
        assert!(Dataset::new("one", documents).is_err());
    }

    #[test]
    fn class_counts() {
        let dist = class_distribution(&docs(&["a", "a", "b"]));
        assert_eq!(dist, BTreeMap::from([("a".to_string(), 2), ("b".to_string(), 1)]));
    }

    #[test]
    fn split_sizes_are_exact() {
        let labels: Vec<&str> = (0..100).map(|i| if i % 3 == 0 { "x" } else { "y" }).collect();
        let d = docs(&labels);
        for seed in [0, 7, 99] {
            let (tr, va, te) = split(&d, SplitRatios::default(), seed).unwrap();
            assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
        }
    }

    #[test]
    fn balanced_split_stays_balanced() {
        let labels: Vec<&str> = (0..200).map(|i| if i < 100 { "a" } else { "b" }).collect();
        let d = docs(&labels);
        let (tr, va, te) = split(&d, SplitRatios::default(), 3).unwrap();
        for part in [tr, va, te] {
            let dist = class_distribution(&part);
            let (a, b) = (dist["a"] as i64, dist["b"] as i64);
            assert!((a - b).abs() <= 1, "{dist:?}");
        }
    }

    #[test]
    fn split_rejects_tiny_classes_and_bad_ratios() {
        let d = docs(&["a", "a", "a", "b", "b"]);
        assert!(matches!(split(&d, SplitRatios::default(), 0), Err(Error::InvalidSplit(_))));
        assert!(SplitRatios::new(0.5, 0.5, 0.1).is_err());
        assert!(SplitRatios::new(1.0, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_stratified_partition(
            counts in proptest::collection::vec(3usize..60, 2..6),
            seed in any::<u64>(),
            train in 0.3f64..0.9,
        ) {
            let val = (1.0 - train) / 2.0;
            let ratios = SplitRatios { train, val, test: 1.0 - train - val };
            let names = ["a", "b", "c", "d", "e", "f"];
            let mut labels = Vec::new();
            for (c, &n) in counts.iter().enumerate() {
                labels.extend(std::iter::repeat_n(names[c], n));
            }
            let d = docs(&labels);
            let s = split_indices(&d, ratios, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
            prop_assert_eq!(&s, &split_indices(&d, ratios, seed).unwrap());
            let n = d.len() as f64;
            for part in [&s.train, &s.val, &s.test] {
                for (c, &nc) in counts.iter().enumerate() {
                    let in_part = part.iter().filter(|&&i| d.documents()[i].label == names[c]).count() as f64;
                    let expected = nc as f64 * part.len() as f64 / n;
                    prop_assert!((in_part - expected).abs() <= 1.0 + 1e-9);
                }
            }
        }
    }
}
