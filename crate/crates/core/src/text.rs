//! Text normalization and the two tokenizations used across the crate.
//!
//! Word tokens (sentiment features, style markers) keep apostrophes inside a
//! word and split every other punctuation character into its own token.
//! Alphanumeric spans (mention lookup, pronoun swapping) treat anything that is
//! not alphanumeric as a boundary.

/// Strips leading/trailing whitespace and collapses internal runs to one space.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Matching key for a verse: whitespace-normalized and lowercased.
pub fn normalize(text: &str) -> String {
    normalize_whitespace(text).to_lowercase()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

/// Lowercased word tokens with punctuation split into single-character tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in lower.chars() {
        if is_word_char(c) {
            current.push(c);
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Joins word tokens back into display text, attaching closing punctuation to
/// the preceding word.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let tok = tok.as_ref();
        let attach = matches!(tok, "," | "." | ";" | ":" | "!" | "?" | ")");
        if !out.is_empty() && !attach {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// Byte spans of maximal alphanumeric runs in `text`.
pub fn alnum_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}
