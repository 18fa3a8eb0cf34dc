use serde::{Deserialize, Serialize};

use super::TokenizerModel;
use crate::error::{Error, Result};

/// Tokens per whitespace-delimited word and per non-whitespace codepoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FertilityStats {
    pub tokens_per_word: f64,
    pub tokens_per_char: f64,
    pub word_count: usize,
    pub char_count: usize,
    pub token_count: usize,
}

pub fn fertility<S: AsRef<str>>(model: &TokenizerModel, corpus: &[S]) -> Result<FertilityStats> {
    if corpus.is_empty() {
        return Err(Error::Empty("fertility corpus"));
    }
    let (mut words, mut chars, mut tokens) = (0usize, 0usize, 0usize);
    for doc in corpus {
        let text = doc.as_ref();
        words += text.split_whitespace().count();
        chars += text.chars().filter(|c| !c.is_whitespace()).count();
        tokens += model.encode(text).len();
    }
    if words == 0 {
        return Err(Error::Empty("fertility corpus has no words"));
    }
    Ok(FertilityStats {
        tokens_per_word: tokens as f64 / words as f64,
        tokens_per_char: tokens as f64 / chars as f64,
        word_count: words,
        char_count: chars,
        token_count: tokens,
    })
}
