use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use super::{resource_lines, TaggedToken};
use crate::error::{Error, Result};

const DEFAULT_LEXICON: &str = include_str!("../../resources/lexicon_en.txt");

static ENGLISH: Lazy<Lexicon> = Lazy::new(|| Lexicon::parse(DEFAULT_LEXICON).expect("bundled lexicon parses"));

/// Coarse part-of-speech tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adv,
    Other,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pos::Noun => "NOUN",
            Pos::Verb => "VERB",
            Pos::Adj => "ADJ",
            Pos::Adv => "ADV",
            Pos::Other => "OTHER",
        })
    }
}

impl std::str::FromStr for Pos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NOUN" => Ok(Pos::Noun),
            "VERB" => Ok(Pos::Verb),
            "ADJ" => Ok(Pos::Adj),
            "ADV" => Ok(Pos::Adv),
            "OTHER" => Ok(Pos::Other),
            other => Err(Error::Config(format!("unknown POS tag `{other}`"))),
        }
    }
}

/// Word forms with a known tag and lemma; everything else goes through
/// suffix rules.
#[derive(Clone, Debug, Default)]
pub struct Lexicon {
    entries: HashMap<String, (Pos, String)>,
}

const NOUN_SUFFIXES: &[&str] = &["tion", "sion", "ment", "ness", "ity", "ance", "ence", "ship", "ism", "hood"];
const ADJ_SUFFIXES: &[&str] = &["ous", "ful", "ive", "able", "ible", "less", "ish", "ic"];

/// Strips `suffix` if at least `min_stem` characters remain.
fn stem_of<'a>(word: &'a str, suffix: &str, min_stem: usize) -> Option<&'a str> {
    word.strip_suffix(suffix).filter(|s| s.chars().count() >= min_stem)
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn plural_s_stem(word: &str) -> Option<&str> {
    if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") || word.ends_with("'s") {
        return None;
    }
    stem_of(word, "s", 3)
}

/// Restores a verb stem after removing `-ing` / `-ed`.
fn restore_verb_stem(stem: &str) -> String {
    let chars: Vec<char> = stem.chars().collect();
    let n = chars.len();
    if n >= 3 && chars[n - 1] == chars[n - 2] && matches!(chars[n - 1], 'b' | 'd' | 'g' | 'm' | 'n' | 'p' | 't' | 'r') {
        return chars[..n - 1].iter().collect();
    }
    let needs_e = stem.ends_with("at")
        || stem.ends_with("iz")
        || stem.ends_with("bl")
        || stem.ends_with('v')
        || stem.ends_with('c')
        || (n == 2 && is_vowel(chars[0]) && !is_vowel(chars[1]))
        || (n == 3
            && !is_vowel(chars[0])
            && is_vowel(chars[1])
            && !is_vowel(chars[2])
            && !matches!(chars[2], 'w' | 'x' | 'y'));
    if needs_e {
        format!("{stem}e")
    } else {
        stem.to_string()
    }
}

impl Lexicon {
    /// The bundled English lexicon.
    pub fn english() -> &'static Lexicon {
        &ENGLISH
    }

    /// Parses `form<TAB>POS<TAB>lemma` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for line in resource_lines(text) {
            let fields: Vec<&str> = line.split('\t').collect();
            let [form, pos, lemma] = fields[..] else {
                return Err(Error::Config(format!("bad lexicon line `{line}`")));
            };
            if form.is_empty() || lemma.is_empty() {
                return Err(Error::Config(format!("bad lexicon line `{line}`")));
            }
            entries.insert(form.to_string(), (pos.parse()?, lemma.to_string()));
        }
        Ok(Lexicon { entries })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lexicon lookup, then suffix rules, then `OTHER`.
    pub fn tag_word(&self, word: &str) -> Pos {
        if let Some((pos, _)) = self.entries.get(word) {
            return *pos;
        }
        if stem_of(word, "ly", 3).is_some() {
            return Pos::Adv;
        }
        if stem_of(word, "ing", 3).is_some() || stem_of(word, "ed", 3).is_some() {
            return Pos::Verb;
        }
        if NOUN_SUFFIXES.iter().any(|s| stem_of(word, s, 2).is_some()) {
            return Pos::Noun;
        }
        if ADJ_SUFFIXES.iter().any(|s| stem_of(word, s, 3).is_some()) {
            return Pos::Adj;
        }
        if plural_s_stem(word).is_some() {
            return Pos::Noun;
        }
        Pos::Other
    }

    pub fn pos_tag(&self, tokens: &[String]) -> Vec<TaggedToken> {
        tokens.iter().map(|t| TaggedToken { surface: t.clone(), pos: self.tag_word(t) }).collect()
    }

    /// Lexicon lookup first, then POS-conditioned suffix stripping.
    pub fn lemma(&self, word: &str, pos: Pos) -> String {
        if let Some((_, lemma)) = self.entries.get(word) {
            return lemma.clone();
        }
        let out = match pos {
            Pos::Noun => {
                if let Some(stem) = stem_of(word, "ies", 2) {
                    format!("{stem}y")
                } else if ["ches", "shes", "sses", "xes", "zes"].iter().any(|s| word.ends_with(s)) {
                    word[..word.len() - 2].to_string()
                } else if let Some(stem) = plural_s_stem(word) {
                    stem.to_string()
                } else {
                    word.to_string()
                }
            }
            Pos::Verb => {
                if let Some(stem) = stem_of(word, "ies", 2).or_else(|| stem_of(word, "ied", 2)) {
                    format!("{stem}y")
                } else if let Some(stem) = stem_of(word, "ing", 3).or_else(|| stem_of(word, "ed", 3)) {
                    restore_verb_stem(stem)
                } else if ["ches", "shes", "sses", "xes", "zes"].iter().any(|s| word.ends_with(s)) {
                    word[..word.len() - 2].to_string()
                } else if let Some(stem) = plural_s_stem(word) {
                    stem.to_string()
                } else {
                    word.to_string()
                }
            }
            Pos::Adj | Pos::Adv | Pos::Other => word.to_string(),
        };
        if out.is_empty() {
            word.to_string()
        } else {
            out
        }
    }

    pub fn lemmatize(&self, tagged: &[TaggedToken]) -> Vec<String> {
        tagged.iter().map(|t| self.lemma(&t.surface, t.pos)).collect()
    }
}
