//! Lexical helpers shared by the search tool and the answer judge.

use alloc::string::String;
use alloc::vec::Vec;

/// Lowercased alphanumeric runs. Everything else separates tokens.
pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(core::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Canonical search-query form used as the cache key.
pub fn normalize_query(text: &str) -> String {
    tokens(text).join(" ")
}

/// Canonical answer form: lowercase, punctuation stripped, articles removed,
/// whitespace collapsed.
pub fn normalize_answer(text: &str) -> String {
    let words: Vec<String> = tokens(text)
        .into_iter()
        .filter(|w| !matches!(w.as_str(), "a" | "an" | "the"))
        .collect();
    words.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_split_on_punctuation() {
        assert_eq!(tokens("Aldmoor, mentor!  X9"), ["aldmoor", "mentor", "x9"]);
        assert!(tokens("  ,. ").is_empty());
    }

    #[test]
    fn answer_normalization() {
        assert_eq!(normalize_answer("The Eiffel Tower"), "eiffel tower");
        assert_eq!(normalize_answer("  Pawtucket, Rhode Island "), "pawtucket rhode island");
    }
}
