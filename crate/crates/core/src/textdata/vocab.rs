use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TextError;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Longest caption, counted in tokens including the final EOS.
pub const DEFAULT_T_MAX: usize = 16;

/// Lowercase + whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Bidirectional token/id map with fixed reserved ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_count` times. Ids after the reserved
    /// block go by descending count, ties broken lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Self, TextError> {
        if min_count == 0 {
            return Err(TextError::Config("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for tok in tokenize(line.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(TextError::EmptyVocabulary);
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(tok, c)| *c >= min_count && !SPECIAL_TOKENS.contains(&tok.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TextError> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return Err(TextError::Config("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(TextError::Config(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
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

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Tokenizes, maps out-of-vocabulary words to UNK, keeps at most
    /// `t_max - 1` words and appends EOS.
    pub fn encode(&self, text: &str, t_max: usize) -> Caption {
        let keep = t_max.max(1) - 1;
        let mut ids: Vec<TokenId> = tokenize(text).iter().take(keep).map(|t| self.id(t)).collect();
        ids.push(EOS);
        Caption { ids, complete: true }
    }

    /// Text of the words before the first EOS; PAD and BOS are skipped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != BOS)
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = TextError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// A bounded token-id sequence. `complete` captions end with EOS.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Caption {
    pub ids: Vec<TokenId>,
    pub complete: bool,
}

impl Caption {
    /// Wraps decoder output; completeness is read off the final token.
    pub fn from_ids(ids: Vec<TokenId>) -> Self {
        let complete = ids.last() == Some(&EOS);
        Self { ids, complete }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Content tokens only: everything before EOS minus PAD and BOS. This is
    /// what the language metrics see.
    pub fn words(&self) -> Vec<TokenId> {
        self.ids
            .iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != BOS)
            .copied()
            .collect()
    }

    /// Ids right-padded with PAD to exactly `t_max` entries (truncating if
    /// longer).
    pub fn padded(&self, t_max: usize) -> Vec<TokenId> {
        let mut out: Vec<TokenId> = self.ids.iter().take(t_max).copied().collect();
        out.resize(t_max, PAD);
        out
    }
}
