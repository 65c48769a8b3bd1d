//! Review text preprocessing: cleaning, word tokenization, stopword removal,
//! rule-based POS tagging and lemmatization.
//!
//! Cleaning rules run in a fixed order: URLs, user handles, numbers,
//! symbols, lowercasing, then whitespace collapsing. Stopwords are removed
//! before tagging and lemmatization.

mod lexicon;

use std::collections::BTreeSet;
use std::path::Path;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledDocument;
use crate::error::{Error, Result};

pub use lexicon::{Lexicon, Pos};

const DEFAULT_STOPWORDS: &str = include_str!("../../resources/stopwords_en.txt");

static URL_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap());
static HANDLE_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"@\w+").unwrap());

/// Parses a one-entry-per-line resource, skipping blanks and `#` comments.
pub(crate) fn resource_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

/// Which cleaning rules run, and the stopword list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanConfig {
    pub lowercase: bool,
    pub strip_urls: bool,
    pub strip_handles: bool,
    pub strip_numbers: bool,
    pub strip_symbols: bool,
    stopwords: BTreeSet<String>,
}

impl Default for CleanConfig {
    /// Every rule enabled with the bundled English stopword list.
    fn default() -> Self {
        CleanConfig {
            lowercase: true,
            strip_urls: true,
            strip_handles: true,
            strip_numbers: true,
            strip_symbols: true,
            stopwords: resource_lines(DEFAULT_STOPWORDS).map(str::to_string).collect(),
        }
    }
}

impl CleanConfig {
    /// All rules off, no stopwords.
    pub fn disabled() -> Self {
        CleanConfig {
            lowercase: false,
            strip_urls: false,
            strip_handles: false,
            strip_numbers: false,
            strip_symbols: false,
            stopwords: BTreeSet::new(),
        }
    }

    pub fn with_stopwords<I, S>(mut self, words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for w in words {
            let w: String = w.into();
            if w.is_empty() || w.to_lowercase() != w {
                return Err(Error::Config(format!("stopword `{w}` must be non-empty and lowercase")));
            }
            set.insert(w);
        }
        self.stopwords = set;
        Ok(self)
    }

    /// Replaces the stopword list with the contents of a resource file.
    pub fn with_stopword_file(self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.with_stopwords(resource_lines(&text).map(str::to_string))
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }
}

fn is_symbol(c: char) -> bool {
    !(c.is_alphabetic() || c.is_numeric() || c.is_whitespace() || c == '\'')
}

/// Applies the enabled cleaning rules and collapses whitespace.
pub fn clean(text: &str, cfg: &CleanConfig) -> String {
    let mut s = text.to_string();
    if cfg.strip_urls {
        s = URL_RE.replace_all(&s, " ").into_owned();
    }
    if cfg.strip_handles {
        s = HANDLE_RE.replace_all(&s, " ").into_owned();
    }
    if cfg.strip_numbers {
        s = s.chars().map(|c| if c.is_numeric() { ' ' } else { c }).collect();
    }
    if cfg.strip_symbols {
        s = s.chars().map(|c| if is_symbol(c) { ' ' } else { c }).collect();
    }
    if cfg.lowercase {
        let mut lowered = String::with_capacity(s.len());
        for c in s.chars() {
            // Case mapping can expand into combining marks; those count as symbols.
            lowered.extend(c.to_lowercase().filter(|&l| !(cfg.strip_symbols && is_symbol(l))));
        }
        s = lowered;
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits cleaned text into word units on whitespace. With symbol and
/// number stripping enabled every token is a run of letters and apostrophes.
pub fn tokenize_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Drops every token found in `stoplist`, preserving order.
pub fn remove_stopwords(tokens: &[String], stoplist: &BTreeSet<String>) -> Vec<String> {
    tokens.iter().filter(|t| !stoplist.contains(t.as_str())).cloned().collect()
}

/// A word with its coarse part of speech.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub surface: String,
    pub pos: Pos,
}

/// Tags with the bundled English lexicon and suffix rules.
pub fn pos_tag(tokens: &[String]) -> Vec<TaggedToken> {
    Lexicon::english().pos_tag(tokens)
}

/// Lemmatizes with the bundled English lexicon and suffix rules.
pub fn lemmatize(tagged: &[TaggedToken]) -> Vec<String> {
    Lexicon::english().lemmatize(tagged)
}

/// Cleaning configuration plus the lexicon used for tagging.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    pub clean: CleanConfig,
    pub lexicon: Lexicon,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor { clean: CleanConfig::default(), lexicon: Lexicon::english().clone() }
    }
}

impl Preprocessor {
    pub fn new(clean: CleanConfig, lexicon: Lexicon) -> Self {
        Preprocessor { clean, lexicon }
    }

    /// clean → tokenize → stopwords → tag → lemmatize.
    pub fn process(&self, text: &str) -> Vec<String> {
        let cleaned = clean(text, &self.clean);
        let tokens = remove_stopwords(&tokenize_words(&cleaned), self.clean.stopwords());
        self.lexicon.lemmatize(&self.lexicon.pos_tag(&tokens))
    }
}

/// Full preprocessing of one document with the bundled lexicon.
pub fn preprocess_pipeline(doc: &LabeledDocument, cfg: &CleanConfig) -> Vec<String> {
    let cleaned = clean(&doc.text, cfg);
    let tokens = remove_stopwords(&tokenize_words(&cleaned), cfg.stopwords());
    lemmatize(&pos_tag(&tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn clean_examples() {
        let cfg = CleanConfig::default();
        assert_eq!(clean("Visit http://x.co @user!! 123 NOW", &cfg), "visit now");
        assert_eq!(clean("", &cfg), "");
        assert_eq!(clean("hello", &CleanConfig::disabled()), "hello");
        assert_eq!(clean("  Hello   World ", &CleanConfig::disabled()), "Hello World");
        assert_eq!(clean("Don't   stop-me www.site.org", &cfg), "don't stop me");
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize_words("good app works"), toks(&["good", "app", "works"]));
        assert!(tokenize_words("").is_empty());
        assert_eq!(tokenize_words("don't stop"), toks(&["don't", "stop"]));
    }

    #[test]
    fn stopword_examples() {
        let stop: BTreeSet<String> = ["the", "is"].iter().map(|s| s.to_string()).collect();
        assert_eq!(remove_stopwords(&toks(&["the", "app", "is", "great"]), &stop), toks(&["app", "great"]));
        assert!(remove_stopwords(&[], &stop).is_empty());
        let a: BTreeSet<String> = ["a".to_string()].into();
        assert_eq!(remove_stopwords(&toks(&["a", "a", "b"]), &a), toks(&["b"]));
    }

    #[test]
    fn tagging_and_lemmas() {
        let tagged = pos_tag(&toks(&["running", "quickly", "zzzq", "cats"]));
        let pos: Vec<Pos> = tagged.iter().map(|t| t.pos).collect();
        assert_eq!(pos, vec![Pos::Verb, Pos::Adv, Pos::Other, Pos::Noun]);
        let lemmas = lemmatize(&[
            TaggedToken { surface: "running".into(), pos: Pos::Verb },
            TaggedToken { surface: "cats".into(), pos: Pos::Noun },
            TaggedToken { surface: "run".into(), pos: Pos::Verb },
        ]);
        assert_eq!(lemmas, toks(&["run", "cat", "run"]));
    }

    #[test]
    fn pipeline_examples() {
        let cfg = CleanConfig::default();
        let doc = LabeledDocument::new("The apps are crashing!!", "neg").unwrap();
        assert_eq!(preprocess_pipeline(&doc, &cfg), toks(&["app", "crash"]));
        let stop = LabeledDocument::new("The and of it is", "neg").unwrap();
        assert!(preprocess_pipeline(&stop, &cfg).is_empty());
        let d = LabeledDocument::new("Rooms were dirty; staff helped us @hotel 24/7", "neg").unwrap();
        let stepwise = lemmatize(&pos_tag(&remove_stopwords(&tokenize_words(&clean(&d.text, &cfg)), cfg.stopwords())));
        assert_eq!(preprocess_pipeline(&d, &cfg), stepwise);
        assert_eq!(Preprocessor::default().process(&d.text), stepwise);
    }

    #[test]
    fn stopwords_must_be_lowercase() {
        assert!(CleanConfig::default().with_stopwords(["The"]).is_err());
        assert!(CleanConfig::default().with_stopwords([""]).is_err());
        assert!(CleanConfig::default().with_stopwords(["the"]).is_ok());
    }

    fn any_config() -> impl Strategy<Value = CleanConfig> {
        (any::<[bool; 5]>()).prop_map(|f| CleanConfig {
            lowercase: f[0],
            strip_urls: f[1],
            strip_handles: f[2],
            strip_numbers: f[3],
            strip_symbols: f[4],
            ..CleanConfig::default()
        })
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(text in "\\PC{0,60}|[a-zA-Z@:/.0-9 !'_-]{0,60}", cfg in any_config()) {
            let once = clean(&text, &cfg);
            prop_assert_eq!(clean(&once, &cfg), once);
        }

        #[test]
        fn stopword_removal_is_idempotent(words in proptest::collection::vec("[a-e]{1,2}", 0..20)) {
            let stop: BTreeSet<String> = ["a", "bb", "c"].iter().map(|s| s.to_string()).collect();
            let once = remove_stopwords(&words, &stop);
            prop_assert!(once.iter().all(|w| !stop.contains(w)));
            prop_assert_eq!(remove_stopwords(&once, &stop), once.clone());
            // order preserved: `once` is a subsequence of the input
            let mut it = words.iter();
            prop_assert!(once.iter().all(|w| it.any(|x| x == w)));
        }

        #[test]
        fn lemmatize_preserves_length(words in proptest::collection::vec("[a-z']{1,12}", 0..30)) {
            let tagged = pos_tag(&words);
            prop_assert_eq!(tagged.len(), words.len());
            let lemmas = lemmatize(&tagged);
            prop_assert_eq!(lemmas.len(), words.len());
            prop_assert!(lemmas.iter().all(|l| !l.is_empty()));
        }

        #[test]
        fn pipeline_never_emits_digits_or_symbols(text in "\\PC{0,80}") {
            let doc = LabeledDocument { text, label: "x".into() };
            for tok in preprocess_pipeline(&doc, &CleanConfig::default()) {
                prop_assert!(tok.chars().all(|c| c.is_alphabetic() || c == '\''), "{}", tok);
            }
        }
    }
}
