//! Tokenization shared by every component that indexes instruction words.
//!
//! Rules: lowercase, split on whitespace, and emit each of `. , ; ! ?` as a
//! token of its own. Nothing else is stripped, so token indices are stable
//! for error localization.

pub const PUNCTUATION: [char; 5] = ['.', ',', ';', '!', '?'];

pub fn is_punctuation(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if PUNCTUATION.contains(&c))
}

pub fn normalize_text(raw: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in raw.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if PUNCTUATION.contains(&c) {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(c.to_string());
            } else {
                word.extend(c.to_lowercase());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

/// Inverse of [`normalize_text`] up to normalization: words are joined by a
/// single space and punctuation attaches to the preceding token.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for token in tokens {
        let token = token.as_ref();
        if !out.is_empty() && !is_punctuation(token) {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Canonical single-space form of a (possibly multiword) phrase.
pub fn normalize_phrase(phrase: &str) -> String {
    normalize_text(phrase).join(" ")
}
