//! Word-level tokenizer with byte fallback.
//!
//! Text is normalized (lowercase, whitespace collapsed, trimmed) and split on
//! whitespace into words, and each word further into runs of alphanumerics and
//! single punctuation characters. Pieces found in the built-in vocabulary map
//! to one token; anything else falls back to one token per UTF-8 byte. Every
//! token exists in two variants, "continues word" and "ends word", so
//! `detokenize(tokenize(x)) == normalize(x)` holds for all inputs.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
const BYTE_BASE: u32 = 3;
const WORD_BASE: u32 = BYTE_BASE + 512;

const WORDS: &str = include_str!("vocab.txt");

/// A `[SOS] ... [EOS]` sequence (unpadded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
}

impl TokenSeq {
    /// Validates the `[SOS] ... [EOS] [PAD]*` layout of a stored sequence and
    /// strips padding.
    pub fn from_padded(ids: &[u32]) -> crate::Result<Self> {
        let eos = ids
            .iter()
            .position(|&t| t == EOS)
            .ok_or(crate::Error::MissingEos)?;
        if ids.first() != Some(&SOS) {
            return Err(crate::Error::shape("token sequence must begin with [SOS]"));
        }
        if ids[eos + 1..].iter().any(|&t| t != PAD) || ids[1..eos].contains(&SOS) {
            return Err(crate::Error::shape("malformed token sequence"));
        }
        Ok(Self {
            ids: ids[..=eos].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn eos_index(&self) -> usize {
        self.ids.len() - 1
    }

    pub fn padded(&self, len: usize) -> Vec<u32> {
        let mut v = self.ids.clone();
        v.resize(len.max(v.len()), PAD);
        v
    }
}

#[derive(Debug)]
pub struct Tokenizer {
    word_ids: HashMap<&'static str, u32>,
    words: Vec<&'static str>,
}

impl Tokenizer {
    pub fn shared() -> &'static Tokenizer {
        static TOKENIZER: OnceLock<Tokenizer> = OnceLock::new();
        TOKENIZER.get_or_init(Tokenizer::new)
    }

    fn new() -> Self {
        let mut words: Vec<&'static str> = Vec::new();
        let mut word_ids = HashMap::new();
        for w in WORDS.split_whitespace() {
            if !word_ids.contains_key(w) {
                word_ids.insert(w, words.len() as u32);
                words.push(w);
            }
        }
        Self { word_ids, words }
    }

    pub fn vocab_size(&self) -> usize {
        WORD_BASE as usize + 2 * self.words.len()
    }

    pub fn normalize(text: &str) -> String {
        text.split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Body tokens of `text`, without `[SOS]`/`[EOS]`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let norm = Self::normalize(text);
        let mut out = Vec::new();
        for word in norm.split(' ').filter(|w| !w.is_empty()) {
            let pieces = split_pieces(word);
            let n = pieces.len();
            for (i, piece) in pieces.into_iter().enumerate() {
                let last = i + 1 == n;
                match self.word_ids.get(piece) {
                    Some(&w) => out.push(WORD_BASE + 2 * w + u32::from(last)),
                    None => {
                        let bytes = piece.as_bytes();
                        for (j, &b) in bytes.iter().enumerate() {
                            let end = last && j + 1 == bytes.len();
                            out.push(BYTE_BASE + 2 * u32::from(b) + u32::from(end));
                        }
                    }
                }
            }
        }
        out
    }

    /// `[SOS] body [EOS]`, truncated so the result has at most `max_len`
    /// tokens with `[EOS]` last.
    pub fn tokenize(&self, text: &str, max_len: usize) -> TokenSeq {
        let body = self.encode(text);
        let keep = body.len().min(max_len.saturating_sub(2));
        let mut ids = Vec::with_capacity(keep + 2);
        ids.push(SOS);
        ids.extend_from_slice(&body[..keep]);
        ids.push(EOS);
        TokenSeq { ids }
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let mut bytes = Vec::new();
        for &t in ids {
            if t < BYTE_BASE {
                continue;
            }
            let (piece, end): (Vec<u8>, bool) = if t < WORD_BASE {
                let k = t - BYTE_BASE;
                (vec![(k / 2) as u8], k % 2 == 1)
            } else {
                let k = t - WORD_BASE;
                match self.words.get((k / 2) as usize) {
                    Some(w) => (w.as_bytes().to_vec(), k % 2 == 1),
                    None => continue,
                }
            };
            bytes.extend_from_slice(&piece);
            if end {
                bytes.push(b' ');
            }
        }
        let s = String::from_utf8_lossy(&bytes);
        s.trim_end().to_string()
    }
}

fn split_pieces(word: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut start = None;
    for (i, ch) in word.char_indices() {
        if ch.is_alphanumeric() {
            start.get_or_insert(i);
        } else {
            if let Some(s) = start.take() {
                pieces.push(&word[s..i]);
            }
            pieces.push(&word[i..i + ch.len_utf8()]);
        }
    }
    if let Some(s) = start {
        pieces.push(&word[s..]);
    }
    pieces
}

/// Free-function form used by the preprocessing pipeline.
pub fn tokenize_text(text: &str, max_len: usize) -> TokenSeq {
    Tokenizer::shared().tokenize(text, max_len)
}

pub fn detokenize(seq: &TokenSeq) -> String {
    Tokenizer::shared().decode(&seq.ids)
}
