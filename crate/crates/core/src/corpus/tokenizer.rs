//! Deterministic byte-level tokenizer with reserved special tokens and an
//! optional table of multi-byte pieces.
//!
//! Ids `0..256` are raw bytes. Special literals sit at reserved ids above 255
//! and are matched before anything else, so they never split. Vocabulary
//! pieces (if any) take the ids after the last special and are matched
//! greedily (longest first) inside the text between specials; any byte not
//! covered by a piece falls back to its byte id. Decoding therefore always
//! reproduces the encoded text exactly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const BYTE_VOCAB: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    #[default]
    ByteLevel,
    VocabTable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecialToken {
    pub literal: String,
    pub id: u32,
}

/// Serializable tokenizer description (the tokenizer spec JSON file).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSpec {
    #[serde(default)]
    pub kind: TokenizerKind,
    /// Optional; when present it must match the size implied by the table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<u32>,
    pub special_tokens: Vec<SpecialToken>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocab: Vec<String>,
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        let literals = ["<think>", "</think>", "<|im_start|>", "<|im_end|>"];
        Self {
            kind: TokenizerKind::ByteLevel,
            vocab_size: None,
            special_tokens: literals
                .iter()
                .enumerate()
                .map(|(i, l)| SpecialToken {
                    literal: l.to_string(),
                    id: BYTE_VOCAB + i as u32,
                })
                .collect(),
            vocab: Vec::new(),
        }
    }
}

impl TokenizerSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Spec with the default special tokens plus the given pieces.
    pub fn with_vocab(vocab: Vec<String>) -> Self {
        Self {
            kind: TokenizerKind::VocabTable,
            vocab,
            ..Self::default()
        }
    }

    pub fn build(&self) -> Result<Tokenizer> {
        Tokenizer::new(self.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    spec: TokenizerSpec,
    /// Byte content of every id, indexed by id.
    pieces: Vec<Vec<u8>>,
    /// Specials sorted longest literal first.
    specials: Vec<(Vec<u8>, u32)>,
    vocab_lookup: HashMap<Vec<u8>, u32>,
    max_piece_len: usize,
    think_open: u32,
    think_close: u32,
}

impl Tokenizer {
    pub fn new(spec: TokenizerSpec) -> Result<Self> {
        if spec.special_tokens.is_empty() {
            return Err(Error::InvalidTokenizer("no special tokens".into()));
        }
        let n_special = spec.special_tokens.len() as u32;
        let mut specials: Vec<(Vec<u8>, u32)> = Vec::with_capacity(spec.special_tokens.len());
        let mut seen_ids = vec![false; n_special as usize];
        for st in &spec.special_tokens {
            if st.literal.is_empty() {
                return Err(Error::InvalidTokenizer("empty special literal".into()));
            }
            let slot = st
                .id
                .checked_sub(BYTE_VOCAB)
                .filter(|s| *s < n_special)
                .ok_or_else(|| {
                    Error::InvalidTokenizer(format!(
                        "special {:?} has id {}; specials must occupy ids {}..{}",
                        st.literal,
                        st.id,
                        BYTE_VOCAB,
                        BYTE_VOCAB + n_special
                    ))
                })?;
            if std::mem::replace(&mut seen_ids[slot as usize], true) {
                return Err(Error::InvalidTokenizer(format!("duplicate special id {}", st.id)));
            }
            if specials.iter().any(|(l, _)| l == st.literal.as_bytes()) {
                return Err(Error::InvalidTokenizer(format!(
                    "duplicate special literal {:?}",
                    st.literal
                )));
            }
            specials.push((st.literal.as_bytes().to_vec(), st.id));
        }
        let find = |lit: &str| {
            specials
                .iter()
                .find(|(l, _)| l == lit.as_bytes())
                .map(|(_, id)| *id)
                .ok_or_else(|| Error::InvalidTokenizer(format!("missing special {lit:?}")))
        };
        let think_open = find(super::THINK_OPEN)?;
        let think_close = find(super::THINK_CLOSE)?;

        let mut pieces: Vec<Vec<u8>> = (0..BYTE_VOCAB).map(|b| vec![b as u8]).collect();
        pieces.resize(pieces.len() + n_special as usize, Vec::new());
        for (lit, id) in &specials {
            pieces[*id as usize] = lit.clone();
        }

        if spec.kind == TokenizerKind::ByteLevel && !spec.vocab.is_empty() {
            return Err(Error::InvalidTokenizer(
                "byte_level tokenizer cannot carry a vocabulary table".into(),
            ));
        }
        let mut vocab_lookup = HashMap::new();
        let mut max_piece_len = 1;
        for piece in &spec.vocab {
            let bytes = piece.as_bytes();
            if bytes.len() < 2 {
                return Err(Error::InvalidTokenizer(format!(
                    "vocabulary piece {piece:?} must span at least two bytes"
                )));
            }
            if specials.iter().any(|(l, _)| contains(bytes, l)) {
                return Err(Error::InvalidTokenizer(format!(
                    "vocabulary piece {piece:?} contains a special literal"
                )));
            }
            let id = pieces.len() as u32;
            if vocab_lookup.insert(bytes.to_vec(), id).is_some() {
                return Err(Error::InvalidTokenizer(format!("duplicate piece {piece:?}")));
            }
            max_piece_len = max_piece_len.max(bytes.len());
            pieces.push(bytes.to_vec());
        }
        if let Some(declared) = spec.vocab_size {
            if declared as usize != pieces.len() {
                return Err(Error::InvalidTokenizer(format!(
                    "vocab_size {declared} does not match table size {}",
                    pieces.len()
                )));
            }
        }
        specials.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        Ok(Self {
            spec,
            pieces,
            specials,
            vocab_lookup,
            max_piece_len,
            think_open,
            think_close,
        })
    }

    pub fn spec(&self) -> &TokenizerSpec {
        &self.spec
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn think_open_id(&self) -> u32 {
        self.think_open
    }

    pub fn think_close_id(&self) -> u32 {
        self.think_close
    }

    pub fn special_id(&self, literal: &str) -> Option<u32> {
        self.specials
            .iter()
            .find(|(l, _)| l == literal.as_bytes())
            .map(|(_, id)| *id)
    }

    pub fn is_special(&self, id: u32) -> bool {
        (BYTE_VOCAB..BYTE_VOCAB + self.specials.len() as u32).contains(&id)
    }

    /// Byte content of one token.
    pub fn token_bytes(&self, id: u32) -> Result<&[u8]> {
        self.pieces
            .get(id as usize)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownTokenId(id))
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let bytes = text.as_bytes();
        let mut out = Vec::with_capacity(bytes.len());
        let mut plain_start = 0;
        let mut i = 0;
        while i < bytes.len() {
            if let Some((lit, id)) = self.special_at(bytes, i) {
                self.encode_plain(&bytes[plain_start..i], &mut out);
                out.push(id);
                i += lit;
                plain_start = i;
            } else {
                i += 1;
            }
        }
        self.encode_plain(&bytes[plain_start..], &mut out);
        out
    }

    fn special_at(&self, bytes: &[u8], at: usize) -> Option<(usize, u32)> {
        self.specials
            .iter()
            .find(|(lit, _)| bytes[at..].starts_with(lit))
            .map(|(lit, id)| (lit.len(), *id))
    }

    fn encode_plain(&self, bytes: &[u8], out: &mut Vec<u32>) {
        let mut i = 0;
        while i < bytes.len() {
            let longest = self.max_piece_len.min(bytes.len() - i);
            let hit = (2..=longest)
                .rev()
                .find_map(|len| self.vocab_lookup.get(&bytes[i..i + len]).map(|id| (len, *id)));
            match hit {
                Some((len, id)) => {
                    out.push(id);
                    i += len;
                }
                None => {
                    out.push(bytes[i] as u32);
                    i += 1;
                }
            }
        }
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            out.extend_from_slice(self.token_bytes(id)?);
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        String::from_utf8(self.decode_bytes(ids)?).map_err(|_| Error::InvalidUtf8)
    }

    /// Byte end offset of every token: `ends[i]` is the exclusive end of
    /// token `i` in the decoded text.
    pub fn byte_ends(&self, ids: &[u32]) -> Result<Vec<usize>> {
        let mut acc = 0;
        ids.iter()
            .map(|&id| {
                acc += self.token_bytes(id)?.len();
                Ok(acc)
            })
            .collect()
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}
