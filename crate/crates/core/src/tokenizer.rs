//! Uncased BERT-style tokenization: whitespace/punctuation splitting, then
//! greedy longest-match WordPiece. Every token keeps the byte range it covers
//! in the original text so character span annotations map onto tokens.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DstError, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Marker tokens added on top of the base vocabulary.
pub const INTENT: &str = "[INTENT]";
pub const SLOT: &str = "[SLOT]";
pub const VALUE: &str = "[VALUE]";
pub const ACT: &str = "[ACT]";
pub const SERVICE: &str = "[SERVICE]";
pub const NONE_VALUE: &str = "[NONE]";

pub const CUSTOM_TOKENS: [&str; 6] = [INTENT, SLOT, VALUE, ACT, SERVICE, NONE_VALUE];
const BASE_SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub text: String,
    /// Byte range in the source string.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut v = Vocab {
            tokens,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    /// Reads a one-token-per-line `vocab.txt`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(Self::from_tokens(text.lines().map(|l| l.to_string()).collect()))
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Appends any missing marker tokens; returns how many were added.
    pub fn add_custom_tokens(&mut self) -> usize {
        let mut added = 0;
        for t in BASE_SPECIALS.iter().chain(CUSTOM_TOKENS.iter()) {
            if !self.index.contains_key(*t) {
                self.tokens.push(t.to_string());
                added += 1;
            }
        }
        self.reindex();
        added
    }

    /// Word-level vocabulary over a text collection, for encoders trained from scratch.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for (word, _, _) in basic_tokenize(text) {
                *counts.entry(word).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = BASE_SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(CUSTOM_TOKENS.iter().map(|s| s.to_string()));
        for (w, _) in words {
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        Self::from_tokens(tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    vocab: Vocab,
}

impl Tokenizer {
    pub fn new(mut vocab: Vocab) -> Self {
        vocab.add_custom_tokens();
        Tokenizer { vocab }
    }

    /// Restores the index after deserialization.
    pub fn rehydrate(mut self) -> Self {
        self.vocab.reindex();
        self
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn special_id(&self, token: &str) -> u32 {
        self.vocab
            .id(token)
            .unwrap_or_else(|| panic!("special token {token} missing from vocabulary"))
    }

    pub fn unk_id(&self) -> u32 {
        self.special_id(UNK)
    }

    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        for (word, start, end) in basic_tokenize(text) {
            if let Some(id) = self.vocab.id(&word) {
                out.push(Token {
                    id,
                    text: word,
                    start,
                    end,
                });
                continue;
            }
            match self.wordpiece(&word) {
                Some(pieces) => {
                    let same_width = word.len() == end - start;
                    let mut offset = 0;
                    for (piece, id) in pieces {
                        let bare = piece.trim_start_matches("##").len();
                        let (s, e) = if same_width {
                            (start + offset, start + offset + bare)
                        } else {
                            (start, end)
                        };
                        offset += bare;
                        out.push(Token {
                            id,
                            text: piece,
                            start: s,
                            end: e,
                        });
                    }
                }
                None => out.push(Token {
                    id: self.unk_id(),
                    text: UNK.to_string(),
                    start,
                    end,
                }),
            }
        }
        out
    }

    /// Like [`Tokenizer::tokenize`], but literal marker strings such as
    /// `[SLOT]` become their single reserved token.
    pub fn tokenize_marked(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        let mut rest_start = 0;
        let mut i = 0;
        let bytes = text.as_bytes();
        while i < text.len() {
            if bytes[i] == b'[' {
                if let Some(marker) = BASE_SPECIALS
                    .iter()
                    .chain(CUSTOM_TOKENS.iter())
                    .find(|m| text[i..].starts_with(**m))
                {
                    out.extend(self.tokenize(&text[rest_start..i]).into_iter().map(|mut t| {
                        t.start += rest_start;
                        t.end += rest_start;
                        t
                    }));
                    out.push(Token {
                        id: self.special_id(marker),
                        text: marker.to_string(),
                        start: i,
                        end: i + marker.len(),
                    });
                    i += marker.len();
                    rest_start = i;
                    continue;
                }
            }
            i += text[i..].chars().next().map_or(1, char::len_utf8);
        }
        out.extend(self.tokenize(&text[rest_start..]).into_iter().map(|mut t| {
            t.start += rest_start;
            t.end += rest_start;
            t
        }));
        out
    }

    pub fn marked_ids(&self, text: &str) -> Vec<u32> {
        self.tokenize_marked(text).into_iter().map(|t| t.id).collect()
    }

    pub fn ids(&self, text: &str) -> Vec<u32> {
        self.tokenize(text).into_iter().map(|t| t.id).collect()
    }

    fn wordpiece(&self, word: &str) -> Option<Vec<(String, u32)>> {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            return None;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut sub: String = chars[start..end].iter().collect();
                if start > 0 {
                    sub = format!("##{sub}");
                }
                if let Some(id) = self.vocab.id(&sub) {
                    found = Some((sub, id));
                    break;
                }
                end -= 1;
            }
            pieces.push(found?);
            start = end;
        }
        Some(pieces)
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// Splits on whitespace and punctuation, lowercasing. Yields (word, byte start, byte end).
pub fn basic_tokenize(text: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut cur: Option<usize> = None;
    let flush = |out: &mut Vec<(String, usize, usize)>, s: usize, e: usize| {
        if e > s {
            out.push((text[s..e].to_lowercase(), s, e));
        }
    };
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() || ch.is_control() {
            if let Some(s) = cur.take() {
                flush(&mut out, s, i);
            }
        } else if is_punct(ch) {
            if let Some(s) = cur.take() {
                flush(&mut out, s, i);
            }
            flush(&mut out, i, i + ch.len_utf8());
        } else if cur.is_none() {
            cur = Some(i);
        }
    }
    if let Some(s) = cur {
        flush(&mut out, s, text.len());
    }
    out
}

pub fn require_vocab_file(dir: &Path) -> Result<Vocab> {
    let path = dir.join("vocab.txt");
    if !path.exists() {
        return Err(DstError::MissingPretrained {
            path,
            hint:
                "download the uncased BERT checkpoint (vocab.txt, config.json, model.safetensors) into this directory"
                    .into(),
        });
    }
    Vocab::load(path)
}
