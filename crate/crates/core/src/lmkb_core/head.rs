//! Vocabulary, token embeddings, vocabulary head and temperature sampling.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{init_uniform, softmax_rows, Matrix};
use crate::{seed, Error, Result};

pub type TokenId = u32;

pub const UNK: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const SPECIALS: [&str; 4] = ["<unk>", "<bos>", "<eos>", "<sep>"];

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(v: Vec<TokenId>) -> Self {
        Self(v)
    }
}

/// Word-level vocabulary. Ids `0..4` are the special tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from content words; duplicates and whitespace are rejected.
    pub fn new<S: AsRef<str>>(content: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> =
            words.iter().enumerate().map(|(i, w)| (w.clone(), i as TokenId)).collect();
        for w in content {
            let w = w.as_ref();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::input(format!("invalid vocabulary word {w:?}")));
            }
            if index.insert(w.to_string(), words.len() as TokenId).is_some() {
                return Err(Error::input(format!("duplicate vocabulary word {w:?}")));
            }
            words.push(w.to_string());
        }
        Ok(Self { words, index })
    }

    /// `size` tokens: the specials followed by `w4, w5, ...`.
    pub fn synthetic(size: usize) -> Result<Self> {
        if size < SPECIALS.len() {
            return Err(Error::config(format!("vocabulary size {size} below {}", SPECIALS.len())));
        }
        Self::new((SPECIALS.len()..size).map(|i| format!("w{i}")))
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIALS.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Whitespace tokenization; unknown words map to `<unk>`.
    pub fn encode(&self, text: &str) -> TokenSeq {
        TokenSeq(text.split_whitespace().map(|w| self.id(w).unwrap_or(UNK)).collect())
    }

    /// Space-joined words; ids outside the vocabulary render as `<unk>`.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.word(id).unwrap_or(SPECIALS[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    /// `[|V|, d_llm]`
    pub e_word: Matrix,
}

impl EmbeddingTable {
    pub fn new(e_word: Matrix) -> Result<Self> {
        if e_word.ncols() == 0 || e_word.nrows() == 0 {
            return Err(Error::shape("embedding table must be non-empty"));
        }
        if e_word.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite embedding entry".into()));
        }
        Ok(Self { e_word })
    }

    /// Entries uniform in `[-1, 1)`.
    pub fn random(size: usize, d_llm: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::new(init_uniform(size, d_llm, 1, rng))
    }

    pub fn size(&self) -> usize {
        self.e_word.nrows()
    }

    pub fn width(&self) -> usize {
        self.e_word.ncols()
    }
}

pub fn embed_tokens(r: &TokenSeq, table: &EmbeddingTable) -> Result<Matrix> {
    let size = table.size();
    let mut out = Matrix::zeros(r.len(), table.width());
    for (i, &id) in r.ids().iter().enumerate() {
        if id as usize >= size {
            return Err(Error::Vocab { id: id as usize, size });
        }
        out.row_mut(i).copy_from(&table.e_word.row(id as usize));
    }
    Ok(out)
}

pub fn output_logits(h: &Matrix, w_out: &Matrix) -> Result<Matrix> {
    if h.ncols() != w_out.nrows() {
        return Err(Error::shape(format!(
            "hidden width {} != head rows {}",
            h.ncols(),
            w_out.nrows()
        )));
    }
    Ok(h * w_out)
}

/// Row-stochastic next-token distributions `softmax(h·W_out)`.
pub fn output_head(h: &Matrix, w_out: &Matrix) -> Result<Matrix> {
    Ok(softmax_rows(&output_logits(h, w_out)?))
}

/// Draws one id from `softmax(logits/tau)`; `tau == 0` selects the (first) argmax.
pub fn sample_with_temperature(logits: &[f64], tau: f64, seed: u64) -> Result<TokenId> {
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::DegenerateDistribution("NaN logit".into()));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::input(format!("temperature must be finite and non-negative, got {tau}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateDistribution("all logits are -inf".into()));
    }
    if tau == 0.0 {
        let id = logits.iter().position(|&v| v == max).unwrap_or(0);
        return Ok(id as TokenId);
    }
    if max == f64::INFINITY {
        let id = logits.iter().position(|&v| v == max).unwrap_or(0);
        return Ok(id as TokenId);
    }
    let weights: Vec<f64> = logits.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    let u: f64 = seed::rng(seed, &[seed::label("sample")]).random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
        }
        acc += w;
        if u < acc {
            return Ok(i as TokenId);
        }
    }
    Ok(last as TokenId)
}
