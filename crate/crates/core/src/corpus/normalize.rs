//! Text normalization: lowercasing, punctuation spacing, and clitic handling
//! (`"I ' m good."` becomes `i 'm good .`).

use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::{Floor, Utterance};
use crate::error::{Error, Result};

/// Splits already-normalized text into surface tokens.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Rule-based English tokenizer. Word runs stay together, every other
/// non-space character becomes its own token, and contraction clitics
/// (`'m`, `'s`, `'re`, `'ve`, `'ll`, `'d`, `n't`) are kept as single tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleTokenizer;

fn token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"n't\b|'(?:s|m|re|ve|ll|d)\b|[\p{L}\p{N}]+|\S").expect("valid token regex"))
}

fn negation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"n\s*'\s*t\b").expect("valid negation regex"))
}

fn clitic_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s*'\s*(s|m|re|ve|ll|d)\b").expect("valid clitic regex"))
}

impl Tokenizer for RuleTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        token_regex().find_iter(text).map(|m| m.as_str().to_string()).collect()
    }
}

/// Lowercases and re-spaces contractions so the tokenizer sees `do n't`
/// and `i 'm` regardless of how the raw text spaced the apostrophe.
pub fn canonicalize(raw: &str) -> String {
    let lower = raw.to_lowercase();
    let neg = negation_regex().replace_all(&lower, " n't");
    clitic_regex().replace_all(&neg, " '$1").into_owned()
}

pub struct Normalizer {
    tokenizer: Box<dyn Tokenizer>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::new(Box::new(RuleTokenizer))
    }
}

impl Normalizer {
    pub fn new(tokenizer: Box<dyn Tokenizer>) -> Self {
        Self { tokenizer }
    }

    pub fn tokens(&self, raw: &str) -> Result<Vec<String>> {
        let tokens = self.tokenizer.tokenize(&canonicalize(raw));
        if tokens.is_empty() {
            return Err(Error::EmptyUtterance);
        }
        Ok(tokens)
    }

    pub fn normalize(&self, raw: &str, floor: Floor) -> Result<Utterance> {
        Ok(Utterance::new(self.tokens(raw)?, floor))
    }
}

/// Normalizes one raw utterance with the default rule tokenizer.
pub fn normalize_text(raw: &str, floor: Floor) -> Result<Utterance> {
    Normalizer::default().normalize(raw, floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(raw: &str) -> Vec<String> {
        Normalizer::default().tokens(raw).unwrap()
    }

    #[test]
    fn contraction_example() {
        assert_eq!(toks("I ' m good."), ["i", "'m", "good", "."]);
    }

    #[test]
    fn single_word_is_untouched() {
        assert_eq!(toks("hello"), ["hello"]);
    }

    #[test]
    fn punctuation_golden() {
        // frozen output of the rule tokenizer
        assert_eq!(toks("A B ? C !"), ["a", "b", "?", "c", "!"]);
        assert_eq!(
            toks("Don't you think it's late?I'll go."),
            ["do", "n't", "you", "think", "it", "'s", "late", "?", "i", "'ll", "go", "."]
        );
        assert_eq!(toks("'sure', he said"), ["'", "sure", "'", ",", "he", "said"]);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(Normalizer::default().tokens("   \t "), Err(Error::EmptyUtterance)));
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(raw in "[a-zA-Z' .,!?nt]{0,30}") {
            if let Ok(first) = Normalizer::default().tokens(&raw) {
                let again = Normalizer::default().tokens(&first.join(" ")).unwrap();
                prop_assert_eq!(first, again);
            }
        }
    }
}
