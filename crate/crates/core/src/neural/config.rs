use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::BpeMode;

/// Architecture family a model imitates. Lineages differ in depth,
/// tokenizer and pretraining objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lineage {
    BertLike,
    ElectraLike,
    DistilLike,
    RobertaLike,
}

impl Lineage {
    pub const ALL: [Lineage; 4] = [Lineage::BertLike, Lineage::ElectraLike, Lineage::DistilLike, Lineage::RobertaLike];

    pub fn name(self) -> &'static str {
        match self {
            Lineage::BertLike => "bert-like",
            Lineage::ElectraLike => "electra-like",
            Lineage::DistilLike => "distil-like",
            Lineage::RobertaLike => "roberta-like",
        }
    }

    /// Display name used in report tables.
    pub fn model_name(self) -> &'static str {
        match self {
            Lineage::BertLike => "BERT",
            Lineage::ElectraLike => "ELECTRA",
            Lineage::DistilLike => "DistilBERT",
            Lineage::RobertaLike => "RoBERTa",
        }
    }

    pub fn tokenizer_mode(self) -> BpeMode {
        match self {
            Lineage::RobertaLike => BpeMode::Byte,
            _ => BpeMode::Char,
        }
    }
}

impl fmt::Display for Lineage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Lineage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Lineage::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown lineage `{s}` (expected bert-like, electra-like, distil-like or roberta-like)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Published sizes; far too large to train here.
    Paper,
    /// Small models that train in seconds on one core.
    Desk,
}

/// What the encoder consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputKind {
    /// Token ids looked up in an embedding table.
    Tokens,
    /// `blocks` dense vectors of width `block_dim`, each linearly projected
    /// (with its own weights) into one token.
    Projected { blocks: usize, block_dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub lineage: Lineage,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_multiplier: usize,
    /// Sequence length L.
    pub max_len: usize,
    pub vocab_size: usize,
    pub classes: usize,
    pub dropout: f64,
    pub input: InputKind,
}

pub const DEFAULT_MAX_LEN: usize = 64;
pub const DEFAULT_VOCAB: usize = 2000;

/// Architecture preset for a lineage at the given scale.
pub fn preset(lineage: Lineage, scale: Scale) -> TransformerConfig {
    let (layers, hidden, heads) = match (scale, lineage) {
        (Scale::Paper, Lineage::DistilLike) => (6, 768, 12),
        (Scale::Paper, _) => (12, 768, 12),
        (Scale::Desk, Lineage::DistilLike) => (2, 64, 4),
        (Scale::Desk, _) => (4, 64, 4),
    };
    let (max_len, vocab_size) = match scale {
        Scale::Paper if lineage == Lineage::RobertaLike => (512, 50265),
        Scale::Paper => (512, 30522),
        Scale::Desk => (DEFAULT_MAX_LEN, DEFAULT_VOCAB),
    };
    TransformerConfig {
        lineage,
        layers,
        hidden,
        heads,
        ffn_multiplier: 4,
        max_len,
        vocab_size,
        classes: 2,
        dropout: 0.1,
        input: InputKind::Tokens,
    }
}

impl TransformerConfig {
    pub fn ffn(&self) -> usize {
        self.hidden * self.ffn_multiplier
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn with_vocab(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = classes;
        self
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    /// A projected-input encoder over `blocks` tokens of width `block_dim`.
    pub fn projected(mut self, blocks: usize, block_dim: usize) -> Self {
        self.input = InputKind::Projected { blocks, block_dim };
        self.max_len = blocks;
        self.vocab_size = 0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.ffn_multiplier == 0 {
            return bad("layers, hidden, heads and ffn_multiplier must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        if self.classes < 2 {
            return bad("at least two classes are required".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        match self.input {
            InputKind::Tokens => {
                if self.max_len < 2 {
                    return bad("max_len must be at least 2".into());
                }
                if self.vocab_size <= crate::tokenizer::SPECIAL_COUNT {
                    return bad(format!("vocab_size {} leaves no room beyond the special tokens", self.vocab_size));
                }
            }
            InputKind::Projected { blocks, block_dim } => {
                if blocks == 0 || block_dim == 0 || self.max_len != blocks {
                    return bad("projected input needs blocks > 0, block_dim > 0 and max_len = blocks".into());
                }
            }
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (h, f, l, c) = (self.hidden, self.ffn(), self.max_len, self.classes);
        let input = match self.input {
            InputKind::Tokens => self.vocab_size * h,
            InputKind::Projected { blocks, block_dim } => blocks * block_dim * h,
        };
        let per_layer = 4 * h + 4 * (h * h + h) + h * f + f + f * h + h;
        let mlm_bias = match self.input {
            InputKind::Tokens => self.vocab_size,
            InputKind::Projected { .. } => 0,
        };
        input + l * h + self.layers * per_layer + 2 * h + h * c + c + mlm_bias + h + 1
    }
}

/// Offsets of one encoder layer's tensors in the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// A named contiguous parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Layer-norm gains start at 1, everything else is drawn or zeroed.
    pub init: GroupInit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupInit {
    Normal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub groups: Vec<ParamGroup>,
    pub(crate) embed: usize,
    pub(crate) pos: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) head_w: usize,
    pub(crate) head_b: usize,
    pub(crate) mlm_b: usize,
    pub(crate) rtd_w: usize,
    pub(crate) rtd_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &TransformerConfig) -> Self {
        let mut groups = Vec::new();
        let mut at = 0;
        let mut add = |name: String, len: usize, init: GroupInit| {
            let offset = at;
            groups.push(ParamGroup { name, offset, len, init });
            at += len;
            offset
        };
        let (h, f) = (cfg.hidden, cfg.ffn());
        let (embed_len, mlm_len) = match cfg.input {
            InputKind::Tokens => (cfg.vocab_size * h, cfg.vocab_size),
            InputKind::Projected { blocks, block_dim } => (blocks * block_dim * h, 0),
        };
        let embed = add("embed".into(), embed_len, GroupInit::Normal);
        let pos = add("pos".into(), cfg.max_len * h, GroupInit::Normal);
        let layers = (0..cfg.layers)
            .map(|i| {
                let mut g = |n: &str, len: usize, init: GroupInit| add(format!("layer{i}.{n}"), len, init);
                LayerOffsets {
                    ln1_g: g("ln1_g", h, GroupInit::Ones),
                    ln1_b: g("ln1_b", h, GroupInit::Zeros),
                    wq: g("wq", h * h, GroupInit::Normal),
                    bq: g("bq", h, GroupInit::Zeros),
                    wk: g("wk", h * h, GroupInit::Normal),
                    bk: g("bk", h, GroupInit::Zeros),
                    wv: g("wv", h * h, GroupInit::Normal),
                    bv: g("bv", h, GroupInit::Zeros),
                    wo: g("wo", h * h, GroupInit::Normal),
                    bo: g("bo", h, GroupInit::Zeros),
                    ln2_g: g("ln2_g", h, GroupInit::Ones),
                    ln2_b: g("ln2_b", h, GroupInit::Zeros),
                    w1: g("w1", h * f, GroupInit::Normal),
                    b1: g("b1", f, GroupInit::Zeros),
                    w2: g("w2", f * h, GroupInit::Normal),
                    b2: g("b2", h, GroupInit::Zeros),
                }
            })
            .collect();
        let lnf_g = add("lnf_g".into(), h, GroupInit::Ones);
        let lnf_b = add("lnf_b".into(), h, GroupInit::Zeros);
        let head_w = add("head_w".into(), h * cfg.classes, GroupInit::Normal);
        let head_b = add("head_b".into(), cfg.classes, GroupInit::Zeros);
        let mlm_b = add("mlm_b".into(), mlm_len, GroupInit::Zeros);
        let rtd_w = add("rtd_w".into(), h, GroupInit::Normal);
        let rtd_b = add("rtd_b".into(), 1, GroupInit::Zeros);
        groups.retain(|g| g.len > 0);
        Layout { groups, embed, pos, layers, lnf_g, lnf_b, head_w, head_b, mlm_b, rtd_w, rtd_b, total: at }
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_presets() {
        let d = preset(Lineage::DistilLike, Scale::Paper);
        assert_eq!((d.layers, d.hidden, d.heads), (6, 768, 12));
        let b = preset(Lineage::BertLike, Scale::Paper);
        assert_eq!((b.layers, b.hidden, b.heads), (12, 768, 12));
        let r = preset(Lineage::RobertaLike, Scale::Paper);
        assert_eq!((r.layers, r.hidden, r.heads), (12, 768, 12));
    }

    #[test]
    fn desk_presets_keep_depth_ratio() {
        let bert = preset(Lineage::BertLike, Scale::Desk);
        let distil = preset(Lineage::DistilLike, Scale::Desk);
        assert_eq!((bert.layers, bert.hidden, bert.heads), (4, 64, 4));
        assert_eq!(distil.layers * 2, bert.layers);
        assert_eq!(preset(Lineage::RobertaLike, Scale::Desk).lineage.tokenizer_mode(), BpeMode::Byte);
        assert_eq!(preset(Lineage::ElectraLike, Scale::Desk).lineage.tokenizer_mode(), BpeMode::Char);
        for l in Lineage::ALL {
            preset(l, Scale::Desk).validate().unwrap();
            preset(l, Scale::Paper).validate().unwrap();
        }
    }

    #[test]
    fn parameter_count_by_hand() {
        // desk bert-like, V = 2000, L = 64, H = 64, F = 256, C = 2
        let cfg = preset(Lineage::BertLike, Scale::Desk);
        let per_layer = 4 * 64 + 4 * (64 * 64 + 64) + 64 * 256 + 256 + 256 * 64 + 64;
        assert_eq!(per_layer, 49_984);
        let want = 2000 * 64 + 64 * 64 + 4 * per_layer + 2 * 64 + 64 * 2 + 2 + 2000 + 64 + 1;
        assert_eq!(cfg.parameter_count(), want);
        assert_eq!(Layout::new(&cfg).total, want);
        let meta = preset(Lineage::RobertaLike, Scale::Desk).projected(3, 4);
        assert_eq!(Layout::new(&meta).total, meta.parameter_count());
    }

    #[test]
    fn invalid_configs() {
        let mut c = preset(Lineage::BertLike, Scale::Desk);
        c.heads = 5;
        assert!(c.validate().is_err());
        let c = preset(Lineage::BertLike, Scale::Desk).with_classes(1);
        assert!(c.validate().is_err());
    }
}
