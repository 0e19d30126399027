use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token string to id map. Id 0 is reserved (never emitted), id 1 is unknown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Builds a vocabulary from tokenized text. Tokens are ranked by count
    /// (descending) then lexicographically; at most `max_size` ids in total,
    /// reserved ids included.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: Option<usize>) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in split_tokens(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab = Vocabulary::new();
        let cap = max_size.unwrap_or(usize::MAX);
        for (tok, _) in ranked {
            if vocab.len() >= cap {
                break;
            }
            vocab.insert(&tok);
        }
        vocab
    }

    /// `size` ids where every id >= 2 is the token `w{id}`.
    pub fn synthetic(size: usize) -> Self {
        let mut vocab = Vocabulary::new();
        for id in 2..size {
            vocab.insert(&synthetic_token(id));
        }
        vocab
    }

    /// Adds a token if absent and returns its id.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Id of `token`, or [`UNK_ID`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn synthetic_token(id: usize) -> String {
    format!("w{id}")
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(Error::Config(
                "vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

/// Lowercases, splits on whitespace, and emits every non-alphanumeric
/// character as its own token.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Token ids of one text span, truncated to the configured maximum length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Token count before truncation.
    pub original_len: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Single unknown token; stands in for an empty span.
    pub fn placeholder() -> Self {
        TokenSequence {
            ids: vec![UNK_ID],
            original_len: 0,
        }
    }
}

pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    if max_len == 0 {
        return Err(Error::Config(
            "max sequence length must be at least 1".into(),
        ));
    }
    let toks = split_tokens(text);
    if toks.is_empty() {
        return Err(Error::EmptySequence("tokenize"));
    }
    let original_len = toks.len();
    let ids = toks.iter().take(max_len).map(|t| vocab.id(t)).collect();
    Ok(TokenSequence { ids, original_len })
}
