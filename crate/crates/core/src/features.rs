//! TF-IDF vectorization of preprocessed token lists.
//!
//! `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, term frequency is the raw
//! count, and rows are L2-normalized by default.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sparse row: strictly increasing indices with non-zero values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SparseVector<T> {
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> SparseVector<T> {
    pub fn empty() -> Self {
        SparseVector { indices: Vec::new(), values: Vec::new() }
    }

    /// Builds from `(index, value)` pairs, summing duplicates and dropping zeros.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, T)>) -> Self {
        let mut acc: BTreeMap<usize, T> = BTreeMap::new();
        for (i, v) in pairs {
            *acc.entry(i).or_insert(T::zero()) += v;
        }
        let (indices, values) = acc.into_iter().filter(|(_, v)| *v != T::zero()).unzip();
        SparseVector { indices, values }
    }

    /// Dense slice to sparse form.
    pub fn from_dense(dense: &[T]) -> Self {
        Self::from_pairs(dense.iter().copied().enumerate())
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// Value at `index` (zero when absent).
    pub fn get(&self, index: usize) -> T {
        match self.indices.binary_search(&index) {
            Ok(pos) => self.values[pos],
            Err(_) => T::zero(),
        }
    }

    pub fn dot_dense(&self, w: &[T]) -> T {
        self.iter().fold(T::zero(), |acc, (i, v)| acc + v * w[i])
    }

    pub fn squared_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.last().copied()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<T> {
        let mut out = vec![T::zero(); dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// Rows of sparse vectors sharing one column dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SparseMatrix<T> {
    rows: Vec<SparseVector<T>>,
    dim: usize,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn new(rows: Vec<SparseVector<T>>, dim: usize) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.indices.len() != r.values.len() || r.indices.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::shape(format!("row {i}: indices must be strictly increasing")));
            }
            if r.max_index().is_some_and(|m| m >= dim) {
                return Err(Error::shape(format!("row {i}: column index out of range for dimension {dim}")));
            }
            if r.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i });
            }
        }
        Ok(SparseMatrix { rows, dim })
    }

    /// Dense row-major input, zeros dropped.
    pub fn from_dense(data: &[T], rows: usize, dim: usize) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::shape(format!("{} values for a {rows}x{dim} matrix", data.len())));
        }
        let rows = if dim == 0 {
            vec![SparseVector::empty(); rows]
        } else {
            data.chunks(dim).map(SparseVector::from_dense).collect()
        };
        Self::new(rows, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[SparseVector<T>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &SparseVector<T> {
        &self.rows[i]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        SparseMatrix { rows: idx.iter().map(|&i| self.rows[i].clone()).collect(), dim: self.dim }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    None,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L2 => "l2",
            Norm::None => "none",
        })
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Norm::L2),
            "none" => Ok(Norm::None),
            other => Err(Error::Config(format!("unknown norm `{other}` (expected l2 or none)"))),
        }
    }
}

/// Vectorizer settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TfidfConfig {
    pub min_df: usize,
    pub norm: Norm,
    /// Also emit adjacent-token bigrams (joined with a space).
    pub bigrams: bool,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig { min_df: 1, norm: Norm::L2, bigrams: false }
    }
}

/// A fitted vectorizer.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfModel<T> {
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<T>,
    doc_count: usize,
    norm: Norm,
    bigrams: bool,
}

fn terms(tokens: &[String], bigrams: bool) -> Vec<String> {
    let mut out: Vec<String> = tokens.to_vec();
    if bigrams {
        out.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    }
    out
}

/// Smoothed inverse document frequency.
pub fn smoothed_idf<T: Scalar>(doc_count: usize, df: usize) -> T {
    (T::from_count(1 + doc_count) / T::from_count(1 + df)).ln() + T::one()
}

/// Unigram fit with the given `min_df` and norm.
pub fn fit_tfidf<T: Scalar>(corpus: &[Vec<String>], min_df: usize, norm: Norm) -> Result<TfidfModel<T>> {
    TfidfModel::fit(corpus, TfidfConfig { min_df, norm, bigrams: false })
}

impl<T: Scalar> TfidfModel<T> {
    pub fn fit(corpus: &[Vec<String>], cfg: TfidfConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in corpus {
            let unique: BTreeSet<String> = terms(doc, cfg.bigrams).into_iter().collect();
            for t in unique {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let kept: Vec<(String, usize)> = df.into_iter().filter(|(_, d)| *d >= cfg.min_df).collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let n = corpus.len();
        let idf = kept.iter().map(|(_, d)| smoothed_idf(n, *d)).collect();
        let vocabulary = kept.into_iter().enumerate().map(|(i, (t, _))| (t, i)).collect();
        Ok(TfidfModel { vocabulary, idf, doc_count: n, norm: cfg.norm, bigrams: cfg.bigrams })
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn column(&self, token: &str) -> Option<usize> {
        self.vocabulary.get(token).copied()
    }

    pub fn idf(&self) -> &[T] {
        &self.idf
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    /// `count × idf` per in-vocabulary term, then the configured norm.
    /// Out-of-vocabulary tokens are ignored.
    pub fn transform(&self, tokens: &[String]) -> SparseVector<T> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for t in terms(tokens, self.bigrams) {
            if let Some(&col) = self.vocabulary.get(&t) {
                *counts.entry(col).or_insert(0) += 1;
            }
        }
        let mut v = SparseVector {
            indices: counts.keys().copied().collect(),
            values: counts.iter().map(|(&c, &n)| T::from_count(n) * self.idf[c]).collect(),
        };
        if self.norm == Norm::L2 {
            let norm = v.squared_norm().sqrt();
            if norm > T::zero() {
                v.values.iter_mut().for_each(|x| *x /= norm);
            }
        }
        v
    }

    pub fn transform_all(&self, docs: &[Vec<String>]) -> SparseMatrix<T> {
        SparseMatrix { rows: docs.iter().map(|d| self.transform(d)).collect(), dim: self.dim() }
    }

    /// Text form: header lines, then `token<TAB>index<TAB>idf`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#tfidf v1\ndoc_count\t{}\nnorm\t{}\nbigrams\t{}\n",
            self.doc_count, self.norm, self.bigrams
        );
        for (t, &i) in &self.vocabulary {
            out.push_str(&format!("{}\t{}\t{}\n", t, i, self.idf[i].to_f64_lossy()));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("tfidf file: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some("#tfidf v1") {
            return Err(bad("missing header"));
        }
        let mut field = |name: &str| -> Result<String> {
            lines
                .next()
                .and_then(|l| l.strip_prefix(&format!("{name}\t")))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{name}`")))
        };
        let doc_count = field("doc_count")?.parse().map_err(|_| bad("doc_count"))?;
        let norm = field("norm")?.parse()?;
        let bigrams = field("bigrams")?.parse().map_err(|_| bad("bigrams"))?;
        let mut rows = Vec::new();
        for line in lines {
            let mut parts = line.rsplitn(3, '\t');
            let (Some(idf), Some(idx), Some(tok)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("bad vocabulary line"));
            };
            let idx: usize = idx.parse().map_err(|_| bad("bad index"))?;
            let idf: f64 = idf.parse().map_err(|_| bad("bad idf"))?;
            rows.push((tok.to_string(), idx, T::lit(idf)));
        }
        let mut idf = vec![T::zero(); rows.len()];
        let mut vocabulary = BTreeMap::new();
        for (tok, idx, v) in rows {
            if idx >= idf.len() || vocabulary.insert(tok, idx).is_some() {
                return Err(bad("indices must be a permutation"));
            }
            idf[idx] = v;
        }
        Ok(TfidfModel { vocabulary, idf, doc_count, norm, bigrams })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn idf_values() {
        let corpus = vec![doc("a b"), doc("a c"), doc("a")];
        let m: TfidfModel<f64> = fit_tfidf(&corpus, 1, Norm::None).unwrap();
        assert_eq!(m.idf()[m.column("a").unwrap()], 1.0);
        let b = m.idf()[m.column("b").unwrap()];
        assert!((b - (2f64.ln() + 1.0)).abs() < 1e-15);
        assert!((b - 1.6931471805599454).abs() < 1e-15);
        assert!(matches!(fit_tfidf::<f64>(&corpus, 4, Norm::L2), Err(Error::EmptyVocabulary)));
        assert!(matches!(fit_tfidf::<f64>(&[], 1, Norm::L2), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn vocabulary_is_lexicographic() {
        let m: TfidfModel<f64> = fit_tfidf(&[doc("zeta alpha mid")], 1, Norm::L2).unwrap();
        assert_eq!(m.column("alpha"), Some(0));
        assert_eq!(m.column("mid"), Some(1));
        assert_eq!(m.column("zeta"), Some(2));
    }

    #[test]
    fn transform_examples() {
        let m: TfidfModel<f64> = fit_tfidf(&[doc("a b"), doc("c")], 1, Norm::L2).unwrap();
        assert_eq!(m.transform(&doc("x y z")), SparseVector::empty());
        let single = m.transform(&doc("b"));
        assert_eq!(single.values, vec![1.0]);

        // hand-set idf(a) = 1, idf(b) = 2
        let manual = TfidfModel::<f64> {
            vocabulary: BTreeMap::from([("a".to_string(), 0), ("b".to_string(), 1)]),
            idf: vec![1.0, 2.0],
            doc_count: 3,
            norm: Norm::None,
            bigrams: false,
        };
        let v = manual.transform(&doc("a a b"));
        assert_eq!(v.indices, vec![0, 1]);
        assert_eq!(v.values, vec![2.0, 2.0]);
    }

    #[test]
    fn bigrams_are_optional() {
        let cfg = TfidfConfig { bigrams: true, ..TfidfConfig::default() };
        let m: TfidfModel<f64> = TfidfModel::fit(&[doc("good app"), doc("bad app")], cfg).unwrap();
        assert!(m.column("good app").is_some());
        assert_eq!(m.dim(), 5);
    }

    #[test]
    fn text_round_trip() {
        let cfg = TfidfConfig { bigrams: true, ..TfidfConfig::default() };
        let m: TfidfModel<f64> = TfidfModel::fit(&[doc("a b c"), doc("b c d"), doc("x")], cfg).unwrap();
        assert_eq!(TfidfModel::<f64>::from_text(&m.to_text()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn transform_invariants(
            docs in proptest::collection::vec(proptest::collection::vec("[a-f]", 0..8), 1..12),
            query in proptest::collection::vec("[a-h]", 0..10),
        ) {
            let m: TfidfModel<f64> = match fit_tfidf(&docs, 1, Norm::L2) {
                Ok(m) => m,
                Err(_) => return Ok(()),
            };
            let v = m.transform(&query);
            prop_assert!(v.indices.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(v.values.iter().all(|&x| x != 0.0));
            prop_assert!(v.indices.iter().all(|&i| i < m.dim()));
            if v.nnz() > 0 {
                prop_assert!((v.squared_norm().sqrt() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn idf_is_monotone_in_df(n in 1usize..1000, df1 in 1usize..1000, df2 in 1usize..1000) {
            let (lo, hi) = (df1.min(df2).min(n), df1.max(df2).min(n));
            prop_assert!(smoothed_idf::<f64>(n, lo) >= smoothed_idf::<f64>(n, hi));
            prop_assert!(smoothed_idf::<f64>(n, hi) > 0.0);
        }

        #[test]
        fn unnormalised_transform_is_linear_in_counts(k in 1usize..5) {
            let m: TfidfModel<f64> = fit_tfidf(&[doc("a b"), doc("b c")], 1, Norm::None).unwrap();
            let once = m.transform(&doc("a b c"));
            let repeated: Vec<String> = std::iter::repeat_n(doc("a b c"), k).flatten().collect();
            let many = m.transform(&repeated);
            for (x, y) in once.values.iter().zip(&many.values) {
                prop_assert!((x * k as f64 - y).abs() < 1e-12);
            }
        }
    }
}
