//! Byte-pair-encoding subword tokenizers.
//!
//! Two modes share one implementation:
//! * [`BpeMode::Char`]: the base alphabet is the set of characters seen in the
//!   training corpus; anything else encodes as the unknown token.
//! * [`BpeMode::Byte`]: the base alphabet is all 256 bytes (each shown as a
//!   printable character), so every string encodes without unknowns and
//!   decodes back to its exact bytes.
//!
//! Text is cut into chunks that carry their leading whitespace (`"a  b"` →
//! `["a", "  b"]`); merges never cross chunk boundaries.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SOS: u32 = 2;
pub const CLS: u32 = 3;
pub const MASK: u32 = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<sos>", "<cls>", "<mask>"];
pub const SPECIAL_COUNT: usize = SPECIAL_TOKENS.len();

/// Shown in decoded text wherever the unknown token appears.
pub const REPLACEMENT_CHAR: char = '\u{FFFD}';

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BpeMode {
    Char,
    Byte,
}

impl fmt::Display for BpeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BpeMode::Char => "char",
            BpeMode::Byte => "byte",
        })
    }
}

impl std::str::FromStr for BpeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(BpeMode::Char),
            "byte" => Ok(BpeMode::Byte),
            other => Err(Error::Config(format!("unknown tokenizer mode `{other}` (expected char or byte)"))),
        }
    }
}

/// Printable stand-in for every byte value (the usual GPT-2 table).
fn byte_alphabet() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u8 {
        let printable = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        table[b as usize] = if printable {
            char::from(b)
        } else {
            let c = char::from_u32(256 + extra).unwrap();
            extra += 1;
            c
        };
    }
    table
}

/// Splits text into chunks that keep their leading whitespace.
fn chunks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws && i > start {
            out.push(&text[start..i]);
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

/// Fixed-length encoded sequence; `ids[0]` is the start token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Builds a sequence from raw ids, padding or truncating to `len`.
    pub fn from_ids(body: &[u32], len: usize) -> Self {
        let mut ids = Vec::with_capacity(len);
        ids.push(SOS);
        ids.extend(body.iter().copied().take(len.saturating_sub(1)));
        let real = ids.len();
        ids.resize(len, PAD);
        let mut attention_mask = vec![1u8; real];
        attention_mask.resize(len, 0);
        TokenSequence { ids, attention_mask }
    }
}

/// A trained tokenizer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    mode: BpeMode,
    merges: Vec<(String, String)>,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    merge_ranks: HashMap<(u32, u32), (usize, u32)>,
}

fn base_symbols(corpus: &[&str], mode: BpeMode) -> Vec<String> {
    match mode {
        BpeMode::Byte => byte_alphabet().iter().map(|c| c.to_string()).collect(),
        BpeMode::Char => {
            let mut set: Vec<char> = corpus.iter().flat_map(|t| t.chars()).collect::<HashSet<_>>().into_iter().collect();
            set.sort_unstable();
            set.into_iter().map(|c| c.to_string()).collect()
        }
    }
}

/// Learns merges greedily by descending pair frequency, breaking ties by the
/// lexicographically smallest `(left, right)` pair. Stops when the vocabulary
/// reaches `vocab_size` or no pair occurs at least twice.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize, mode: BpeMode) -> Result<BpeModel> {
    let texts: Vec<&str> = corpus.iter().map(AsRef::as_ref).collect();
    if texts.iter().all(|t| t.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let base = base_symbols(&texts, mode);
    let required = SPECIAL_COUNT + base.len();
    if vocab_size < required {
        return Err(Error::VocabTooSmall { requested: vocab_size, required });
    }
    let mut model = BpeModel::assemble(mode, base, Vec::new())?;

    let mut chunk_counts: BTreeMap<&str, i64> = BTreeMap::new();
    for t in &texts {
        for c in chunks(t) {
            *chunk_counts.entry(c).or_insert(0) += 1;
        }
    }
    let mut words: Vec<(Vec<u32>, i64)> =
        chunk_counts.into_iter().map(|(c, n)| (model.base_ids(c), n)).collect();

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut pair_where: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (w, (syms, n)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            if p[0] == UNK || p[1] == UNK {
                continue;
            }
            *pair_counts.entry((p[0], p[1])).or_insert(0) += n;
            pair_where.entry((p[0], p[1])).or_default().insert(w);
        }
    }
    let mut banned: HashSet<(u32, u32)> = HashSet::new();

    while model.vocab.len() < vocab_size {
        let mut best: Option<((u32, u32), i64)> = None;
        for (&pair, &count) in &pair_counts {
            if count < 2 || banned.contains(&pair) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bp, bc)) => {
                    count > bc
                        || (count == bc
                            && (model.vocab[pair.0 as usize].as_str(), model.vocab[pair.1 as usize].as_str())
                                < (model.vocab[bp.0 as usize].as_str(), model.vocab[bp.1 as usize].as_str()))
                }
            };
            if better {
                best = Some((pair, count));
            }
        }
        let Some((pair, _)) = best else { break };
        let merged = format!("{}{}", model.vocab[pair.0 as usize], model.vocab[pair.1 as usize]);
        if SPECIAL_TOKENS.contains(&merged.as_str()) {
            banned.insert(pair);
            continue;
        }
        let new_id = model.push_merge(pair, merged);

        let affected: Vec<usize> = pair_where.remove(&pair).map(|s| s.into_iter().collect()).unwrap_or_default();
        let mut affected = affected;
        affected.sort_unstable();
        for w in affected {
            let (syms, n) = &mut words[w];
            let n = *n;
            for p in syms.windows(2) {
                if p[0] == UNK || p[1] == UNK {
                    continue;
                }
                if let Some(c) = pair_counts.get_mut(&(p[0], p[1])) {
                    *c -= n;
                }
            }
            *syms = merge_pair(syms, pair, new_id);
            for p in syms.windows(2) {
                if p[0] == UNK || p[1] == UNK {
                    continue;
                }
                *pair_counts.entry((p[0], p[1])).or_insert(0) += n;
                pair_where.entry((p[0], p[1])).or_default().insert(w);
            }
        }
        pair_counts.retain(|_, c| *c > 0);
    }
    Ok(model)
}

fn merge_pair(syms: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            _ => return Err(Error::Format(format!("bad escape in `{s}`"))),
        }
    }
    Ok(out)
}

impl BpeModel {
    fn assemble(mode: BpeMode, base: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        let mut model = BpeModel {
            mode,
            merges: Vec::new(),
            vocab: Vec::new(),
            index: HashMap::new(),
            merge_ranks: HashMap::new(),
        };
        for s in SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(base) {
            if model.index.contains_key(&s) {
                return Err(Error::Format(format!("duplicate symbol `{s}`")));
            }
            model.index.insert(s.clone(), model.vocab.len() as u32);
            model.vocab.push(s);
        }
        for (l, r) in merges {
            let (Some(&a), Some(&b)) = (model.index.get(&l), model.index.get(&r)) else {
                return Err(Error::Format(format!("merge `{l} {r}` uses unknown symbols")));
            };
            let merged = format!("{l}{r}");
            model.push_merge((a, b), merged);
        }
        Ok(model)
    }

    fn push_merge(&mut self, pair: (u32, u32), merged: String) -> u32 {
        let id = match self.index.get(&merged) {
            Some(&id) => id,
            None => {
                let id = self.vocab.len() as u32;
                self.index.insert(merged.clone(), id);
                self.vocab.push(merged);
                id
            }
        };
        let rank = self.merges.len();
        self.merges.push((self.vocab[pair.0 as usize].clone(), self.vocab[pair.1 as usize].clone()));
        self.merge_ranks.entry(pair).or_insert((rank, id));
        id
    }

    /// Number of base (unmerged) symbols.
    fn base_len(&self) -> usize {
        let created: HashSet<String> = self.merges.iter().map(|(l, r)| format!("{l}{r}")).collect();
        self.vocab[SPECIAL_COUNT..].iter().take_while(|s| !created.contains(*s)).count()
    }

    pub fn mode(&self) -> BpeMode {
        self.mode
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    fn base_ids(&self, chunk: &str) -> Vec<u32> {
        match self.mode {
            BpeMode::Byte => {
                let table = byte_alphabet();
                chunk.bytes().map(|b| self.index[&table[b as usize].to_string()]).collect()
            }
            BpeMode::Char => {
                let mut buf = [0u8; 4];
                chunk.chars().map(|c| self.index.get(&*c.encode_utf8(&mut buf)).copied().unwrap_or(UNK)).collect()
            }
        }
    }

    /// Applies the learned merges, lowest rank first, to one chunk.
    fn encode_chunk(&self, chunk: &str) -> Vec<u32> {
        let mut syms = self.base_ids(chunk);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|p| self.merge_ranks.get(&(p[0], p[1])).map(|&(rank, id)| (rank, (p[0], p[1]), id)))
                .min_by_key(|&(rank, _, _)| rank);
            let Some((_, pair, id)) = best else { break };
            syms = merge_pair(&syms, pair, id);
        }
        syms
    }

    /// Token ids of `text` without special tokens or padding.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        chunks(text).into_iter().flat_map(|c| self.encode_chunk(c)).collect()
    }

    /// Start token, body truncated to `len - 1`, right padding.
    pub fn encode(&self, text: &str, len: usize) -> TokenSequence {
        assert!(len >= 2, "sequence length must be at least 2");
        TokenSequence::from_ids(&self.tokenize(text), len)
    }

    pub fn encode_batch<S: AsRef<str>>(&self, texts: &[S], len: usize) -> Vec<TokenSequence> {
        texts.iter().map(|t| self.encode(t.as_ref(), len)).collect()
    }

    fn check_id(&self, id: u32) -> Result<()> {
        if (id as usize) < self.vocab.len() {
            Ok(())
        } else {
            Err(Error::InvalidTokenId(id))
        }
    }

    /// Raw bytes of the sequence body (byte mode reproduces input exactly).
    pub fn decode_bytes(&self, seq: &TokenSequence) -> Result<Vec<u8>> {
        let table = byte_alphabet();
        let reverse: HashMap<char, u8> = table.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        let mut out = Vec::new();
        for &id in &seq.ids {
            self.check_id(id)?;
            match id {
                PAD | SOS | CLS | MASK => {}
                UNK => {
                    let mut buf = [0u8; 4];
                    out.extend_from_slice(REPLACEMENT_CHAR.encode_utf8(&mut buf).as_bytes());
                }
                _ => {
                    let sym = &self.vocab[id as usize];
                    match self.mode {
                        BpeMode::Byte => out.extend(sym.chars().map(|c| reverse[&c])),
                        BpeMode::Char => out.extend_from_slice(sym.as_bytes()),
                    }
                }
            }
        }
        Ok(out)
    }

    /// Decoded text; unknown tokens become U+FFFD.
    pub fn decode(&self, seq: &TokenSequence) -> Result<String> {
        let bytes = self.decode_bytes(seq)?;
        Ok(String::from_utf8(bytes).unwrap_or_else(|e| String::from_utf8_lossy(e.as_bytes()).into_owned()))
    }

    /// Text serialization: header, merges, then `symbol<TAB>id` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("#bpe v1\n");
        out.push_str(&format!("mode\t{}\n", self.mode));
        out.push_str(&format!("vocab\t{}\n", self.vocab.len()));
        out.push_str(&format!("base\t{}\n", self.base_len()));
        out.push_str(&format!("merges\t{}\n", self.merges.len()));
        for (l, r) in &self.merges {
            out.push_str(&format!("{}\t{}\n", escape(l), escape(r)));
        }
        for (id, s) in self.vocab.iter().enumerate() {
            out.push_str(&format!("{}\t{}\n", escape(s), id));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.split('\n');
        let bad = |m: &str| Error::Format(format!("tokenizer file: {m}"));
        if lines.next() != Some("#bpe v1") {
            return Err(bad("missing `#bpe v1` header"));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(&format!("{name}\t")).map(str::to_string).ok_or_else(|| bad(&format!("expected `{name}`")))
        };
        let mode: BpeMode = field("mode")?.parse()?;
        let vocab_len: usize = field("vocab")?.parse().map_err(|_| bad("bad vocab size"))?;
        let base_len: usize = field("base")?.parse().map_err(|_| bad("bad base size"))?;
        let merge_len: usize = field("merges")?.parse().map_err(|_| bad("bad merge count"))?;
        let mut merges = Vec::with_capacity(merge_len);
        for _ in 0..merge_len {
            let line = lines.next().ok_or_else(|| bad("truncated merges"))?;
            let (l, r) = line.split_once('\t').ok_or_else(|| bad("merge line without tab"))?;
            merges.push((unescape(l)?, unescape(r)?));
        }
        let mut vocab = Vec::with_capacity(vocab_len);
        for expected in 0..vocab_len {
            let line = lines.next().ok_or_else(|| bad("truncated vocab"))?;
            let (s, id) = line.rsplit_once('\t').ok_or_else(|| bad("vocab line without tab"))?;
            if id.parse::<usize>().ok() != Some(expected) {
                return Err(bad("vocab ids must be contiguous"));
            }
            vocab.push(unescape(s)?);
        }
        if vocab.len() < SPECIAL_COUNT || vocab[..SPECIAL_COUNT].iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b) {
            return Err(bad("special tokens missing"));
        }
        if SPECIAL_COUNT + base_len > vocab.len() {
            return Err(bad("base size exceeds vocabulary"));
        }
        let base = vocab[SPECIAL_COUNT..SPECIAL_COUNT + base_len].to_vec();
        let model = BpeModel::assemble(mode, base, merges)?;
        if model.vocab != vocab {
            return Err(bad("vocabulary does not match merges"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
