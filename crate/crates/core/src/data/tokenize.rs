//! Whitespace/punctuation tokenizer with exact character offsets.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits into maximal runs of letters/digits and single punctuation marks.
/// Whitespace separates tokens and is never part of one. Offsets are `char`
/// indices.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut run: Option<(usize, String)> = None;
    for (i, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() {
            run.get_or_insert_with(|| (i, String::new())).1.push(ch);
            continue;
        }
        if let Some((start, word)) = run.take() {
            tokens.push(Token {
                end: start + word.chars().count(),
                text: word,
                start,
            });
        }
        if !ch.is_whitespace() {
            tokens.push(Token {
                text: ch.to_string(),
                start: i,
                end: i + 1,
            });
        }
    }
    if let Some((start, word)) = run {
        tokens.push(Token {
            end: start + word.chars().count(),
            text: word,
            start,
        });
    }
    tokens
}

/// Joins token strings back into readable text: punctuation that normally
/// hugs the previous word is attached without a space.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let t = tok.as_ref();
        let hugs_left = matches!(t, "," | "." | ";" | ":" | "!" | "?" | ")" | "]" | "}" | "%");
        if !out.is_empty() && !hugs_left && !out.ends_with(['(', '[', '{']) {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}
