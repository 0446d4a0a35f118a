//! Fixed toy vocabulary and prompt tokens.
//!
//! Multi-word connectives are single tokens, so every prompt, including
//! the composed two-subject form, fits the 8-token limit.

use svdiff_diffusion::TokenId;
use svdiff_linalg::error::{Error, Result};

pub const PAD: TokenId = 0;
pub const NULL: TokenId = 1;
pub const PHOTO_OF_A: TokenId = 2;
pub const AND_A: TokenId = 3;
pub const ON_THE_LEFT: TokenId = 4;
pub const ON_THE_RIGHT: TokenId = 5;
pub const CIRCLE: TokenId = 6;
pub const SQUARE: TokenId = 7;
pub const CROSS: TokenId = 8;
pub const V1: TokenId = 9;
pub const V2: TokenId = 10;
pub const V3: TokenId = 11;

/// Rows in the embedding table (fixed capacity, partially used).
pub const VOCAB_CAPACITY: usize = 64;
pub const MAX_PROMPT_LEN: usize = 8;

/// Spelled-out forms, longest phrases first so parsing is greedy.
const SPELLINGS: &[(&str, TokenId)] = &[
    ("photo of a", PHOTO_OF_A),
    ("on the left", ON_THE_LEFT),
    ("on the right", ON_THE_RIGHT),
    ("and a", AND_A),
    ("circle", CIRCLE),
    ("square", SQUARE),
    ("cross", CROSS),
    ("v1", V1),
    ("v2", V2),
    ("v3", V3),
    ("<null>", NULL),
    ("<pad>", PAD),
];

pub const CLASS_TOKENS: [TokenId; 3] = [CIRCLE, SQUARE, CROSS];
pub const PLACEHOLDER_TOKENS: [TokenId; 3] = [V1, V2, V3];

pub fn is_placeholder(id: TokenId) -> bool {
    PLACEHOLDER_TOKENS.contains(&id)
}

pub fn is_class_word(id: TokenId) -> bool {
    CLASS_TOKENS.contains(&id)
}

pub fn token_text(id: TokenId) -> &'static str {
    SPELLINGS
        .iter()
        .find(|(_, t)| *t == id)
        .map(|(s, _)| *s)
        .unwrap_or("<unk>")
}

/// Validated prompt: at most 8 tokens, all ids inside the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTokens {
    ids: Vec<TokenId>,
}

impl PromptTokens {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        if ids.len() > MAX_PROMPT_LEN {
            return Err(Error::Domain(format!(
                "prompt has {} tokens, limit is {MAX_PROMPT_LEN}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| (id as usize) >= VOCAB_CAPACITY) {
            return Err(Error::Domain(format!("token id {bad} outside vocabulary")));
        }
        Ok(Self { ids })
    }

    /// The unconditional prompt.
    pub fn null() -> Self {
        Self { ids: vec![NULL] }
    }

    /// Greedy longest-match tokenization of a lowercase-insensitive
    /// whitespace-separated string.
    pub fn parse(text: &str) -> Result<Self> {
        let lowered = text.to_lowercase();
        let words: Vec<&str> = lowered.split_whitespace().collect();
        let mut ids = Vec::new();
        let mut i = 0;
        'outer: while i < words.len() {
            for (spelling, id) in SPELLINGS {
                let parts: Vec<&str> = spelling.split_whitespace().collect();
                if words[i..].starts_with(&parts[..]) {
                    ids.push(*id);
                    i += parts.len();
                    continue 'outer;
                }
            }
            return Err(Error::Domain(format!("unknown word {:?} in prompt", words[i])));
        }
        Self::new(ids)
    }

    pub fn render(&self) -> String {
        self.ids
            .iter()
            .map(|&id| token_text(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains_placeholder(&self) -> bool {
        self.ids.iter().any(|&id| is_placeholder(id))
    }

    /// Positions of `id` in the prompt.
    pub fn positions_of(&self, id: TokenId) -> Vec<usize> {
        self.ids
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| (t == id).then_some(i))
            .collect()
    }
}
