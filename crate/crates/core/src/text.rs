//! Tokenization, vocabulary construction and integer encoding.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::normalize::TURN_SEPARATOR;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const NUM_RESERVED: usize = 4;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const MASK_TOKEN: &str = "<mask>";
/// The separator token is the turn marker itself, so encoding a context
/// string maps the marker straight to [`SEP_ID`].
pub const SEP_TOKEN: &str = TURN_SEPARATOR;

/// Default maximum model input length in tokens.
pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TextError {
    #[error("id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    /// One token per extended grapheme cluster; whitespace is dropped.
    #[default]
    Character,
    /// Maximal runs of non-whitespace.
    Whitespace,
}

/// Tokens of a source text with their byte spans into it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    pub source: String,
    pub tokens: Vec<String>,
    /// `(start, end)` byte offsets into `source`.
    pub spans: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Keeps the last `max_len` tokens (most recent context).
    pub fn truncate_front(&mut self, max_len: usize) {
        if self.tokens.len() > max_len {
            let cut = self.tokens.len() - max_len;
            self.tokens.drain(..cut);
            self.spans.drain(..cut);
        }
    }

    /// Source text covering tokens `first..=last`.
    pub fn phrase(&self, first: usize, last: usize) -> &str {
        &self.source[self.spans[first].0..self.spans[last].1]
    }
}

pub fn tokenize(text: &str, mode: TokenizerMode) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    match mode {
        TokenizerMode::Character => {
            for (start, g) in text.grapheme_indices(true) {
                if g.chars().all(char::is_whitespace) {
                    continue;
                }
                tokens.push(String::from(g));
                spans.push((start, start + g.len()));
            }
        }
        TokenizerMode::Whitespace => {
            let mut start: Option<usize> = None;
            for (i, c) in text.char_indices() {
                match (c.is_whitespace(), start) {
                    (true, Some(s)) => {
                        tokens.push(String::from(&text[s..i]));
                        spans.push((s, i));
                        start = None;
                    }
                    (false, None) => start = Some(i),
                    _ => {}
                }
            }
            if let Some(s) = start {
                tokens.push(String::from(&text[s..]));
                spans.push((s, text.len()));
            }
        }
    }
    TokenSequence { source: text.into(), tokens, spans }
}

/// Bijective token↔id mapping with fixed reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    mode: TokenizerMode,
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Counts token frequencies and assigns ids by descending frequency, then
    /// lexicographic order, after the four reserved tokens.
    pub fn build(corpus: &[TokenSequence], min_freq: usize, mode: TokenizerMode) -> Result<Self, TextError> {
        if corpus.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for seq in corpus {
            for t in &seq.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> =
            counts.into_iter().filter(|(t, c)| *c >= min_freq.max(1) && !RESERVED.contains(t)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = RESERVED.iter().copied().chain(ranked.into_iter().map(|(t, _)| t)).map(String::from).collect();
        Self::from_tokens(tokens, mode)
    }

    /// Rebuilds from an id-ordered token list; the first four entries must be
    /// the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>, mode: TokenizerMode) -> Result<Self, TextError> {
        if tokens.len() < NUM_RESERVED || tokens[..NUM_RESERVED].iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(TextError::InvalidVocabulary("reserved tokens missing or misplaced".into()));
        }
        let mut index = BTreeMap::new();
        for (id, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), id as u32).is_some() {
                return Err(TextError::InvalidVocabulary(alloc::format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { mode, tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, seq: &TokenSequence) -> Vec<u32> {
        seq.tokens.iter().map(|t| self.id(t).unwrap_or(UNK_ID)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>, TextError> {
        ids.iter()
            .map(|&id| self.token(id).map(String::from).ok_or(TextError::IdOutOfRange { id, size: self.len() }))
            .collect()
    }

    /// Tokenizes in this vocabulary's mode, truncates from the front and
    /// encodes. Returns the kept tokens alongside their ids.
    pub fn prepare(&self, text: &str, max_len: usize) -> (TokenSequence, Vec<u32>) {
        let mut seq = tokenize(text, self.mode);
        seq.truncate_front(max_len);
        let ids = self.encode(&seq);
        (seq, ids)
    }

    /// Order-sensitive FNV-1a digest of the token list, used to pair
    /// checkpoints with the vocabulary they were trained on.
    pub fn fingerprint(&self) -> u64 {
        let mut h = FNV_OFFSET;
        for t in &self.tokens {
            h = fnv1a(h, t.as_bytes());
            h = fnv1a(h, &[0xff]);
        }
        h
    }

    pub fn to_file(&self) -> VocabularyFile {
        VocabularyFile {
            header: VocabularyHeader {
                pad: PAD_ID,
                unk: UNK_ID,
                mask: MASK_ID,
                sep: SEP_ID,
                mode: self.mode,
                size: self.len(),
            },
            tokens: self.index.clone(),
        }
    }

    pub fn from_file(file: VocabularyFile) -> Result<Self, TextError> {
        let h = &file.header;
        if (h.pad, h.unk, h.mask, h.sep) != (PAD_ID, UNK_ID, MASK_ID, SEP_ID) {
            return Err(TextError::InvalidVocabulary("unexpected reserved ids".into()));
        }
        let mut tokens = alloc::vec![None; file.tokens.len()];
        for (t, &id) in &file.tokens {
            let slot = tokens
                .get_mut(id as usize)
                .ok_or_else(|| TextError::InvalidVocabulary(alloc::format!("id {id} is not dense")))?;
            *slot = Some(t.clone());
        }
        let tokens: Option<Vec<String>> = tokens.into_iter().collect();
        let tokens = tokens.ok_or_else(|| TextError::InvalidVocabulary("ids are not dense".into()))?;
        if tokens.len() != h.size {
            return Err(TextError::InvalidVocabulary("size does not match header".into()));
        }
        Self::from_tokens(tokens, h.mode)
    }
}

const RESERVED: [&str; NUM_RESERVED] = [PAD_TOKEN, UNK_TOKEN, MASK_TOKEN, SEP_TOKEN];

/// Persisted vocabulary: `{"header": {...}, "tokens": {token: id}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyFile {
    pub header: VocabularyHeader,
    pub tokens: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyHeader {
    pub pad: u32,
    pub unk: u32,
    pub mask: u32,
    pub sep: u32,
    pub mode: TokenizerMode,
    pub size: usize,
}

pub(crate) const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

pub(crate) fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
