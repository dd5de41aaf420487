//! Vocabulary-driven WordPiece tokenizer.
//!
//! Text is lowercased, split on whitespace and ASCII punctuation, and each
//! word is segmented greedily into the longest vocabulary prefix, with
//! non-initial pieces carrying the `##` continuation prefix. Sequences are
//! framed as `[CLS] … [SEP]` and right-padded with `[PAD]`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

const CONTINUATION: &str = "##";
const MAX_PIECES_PER_WORD: usize = 100;

pub type TokenId = u32;

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary is missing special token {0}")]
    MissingSpecial(&'static str),
    #[error("duplicate vocabulary entry `{token}` at lines {first} and {second}")]
    DuplicateToken {
        token: String,
        first: usize,
        second: usize,
    },
    #[error("max_len must be at least 2, got {0}")]
    MaxLenTooSmall(usize),
    #[error("token id {id} at position {position} is outside vocabulary of size {size}")]
    IdOutOfRange {
        id: TokenId,
        position: usize,
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
    pad: TokenId,
    unk: TokenId,
    cls: TokenId,
    sep: TokenId,
}

impl Vocabulary {
    /// Builds a vocabulary where each token's id is its index.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let id_to_token: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, tok) in id_to_token.iter().enumerate() {
            if let Some(prev) = token_to_id.insert(tok.clone(), id as TokenId) {
                return Err(TokenizerError::DuplicateToken {
                    token: tok.clone(),
                    first: prev as usize,
                    second: id,
                });
            }
        }
        let special = |name: &'static str| {
            token_to_id
                .get(name)
                .copied()
                .ok_or(TokenizerError::MissingSpecial(name))
        };
        Ok(Self {
            pad: special(PAD)?,
            unk: special(UNK)?,
            cls: special(CLS)?,
            sep: special(SEP)?,
            token_to_id,
            id_to_token,
        })
    }

    /// Reads a `vocab.txt` file: one token per line, id = 0-based line index.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r')))
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn pad_id(&self) -> TokenId {
        self.pad
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk
    }

    pub fn cls_id(&self) -> TokenId {
        self.cls
    }

    pub fn sep_id(&self) -> TokenId {
        self.sep
    }

    /// Ids of the framing tokens `[CLS]`, `[SEP]` and `[PAD]`.
    pub fn framing_ids(&self) -> [TokenId; 3] {
        [self.cls, self.sep, self.pad]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// Ordered token ids. Freshly encoded sequences are framed
/// (`[CLS] … [SEP] [PAD]*`); perturbed ones need not be.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when the sequence starts with `[CLS]`, holds exactly one `[SEP]`
    /// and only `[PAD]` follows it.
    pub fn is_framed(&self, vocab: &Vocabulary) -> bool {
        let ids = &self.0;
        if ids.len() < 2 || ids[0] != vocab.cls {
            return false;
        }
        let seps: Vec<usize> = ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == vocab.sep)
            .map(|(i, _)| i)
            .collect();
        match seps[..] {
            [pos] => ids[pos + 1..].iter().all(|&id| id == vocab.pad),
            _ => false,
        }
    }
}

fn split_words(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in lowered.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(ch.to_string());
        } else {
            current.push(ch);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Greedy longest-match-first segmentation of one word; `None` when some
/// suffix has no vocabulary cover.
fn wordpiece(word: &str, vocab: &Vocabulary) -> Option<Vec<TokenId>> {
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut candidate = String::new();
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION);
            }
            candidate.extend(&chars[start..end]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        pieces.push(found?);
        if pieces.len() > MAX_PIECES_PER_WORD {
            return None;
        }
        start = end;
    }
    Some(pieces)
}

/// Subword ids for `text` without any framing.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    split_words(text)
        .iter()
        .flat_map(|w| wordpiece(w, vocab).unwrap_or_else(|| vec![vocab.unk]))
        .collect()
}

/// Encodes `text` into exactly `max_len` ids: `[CLS] tokens [SEP]`, padded
/// with `[PAD]`, truncated so `[SEP]` is always last before padding.
pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence, TokenizerError> {
    if max_len < 2 {
        return Err(TokenizerError::MaxLenTooSmall(max_len));
    }
    let mut body = tokenize(text, vocab);
    body.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(vocab.cls);
    ids.extend(body);
    ids.push(vocab.sep);
    ids.resize(max_len, vocab.pad);
    Ok(TokenSequence(ids))
}

/// Renders ids as text: tokens joined by spaces, `##` pieces fused onto the
/// preceding token, special tokens kept literally.
pub fn decode(ids: &[TokenId], vocab: &Vocabulary) -> Result<String, TokenizerError> {
    let mut out = String::new();
    for (position, &id) in ids.iter().enumerate() {
        let tok = vocab.token(id).ok_or(TokenizerError::IdOutOfRange {
            id,
            position,
            size: vocab.len(),
        })?;
        match tok.strip_prefix(CONTINUATION) {
            Some(rest) if !rest.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    Ok(out)
}
