//! Shared text normalization: lowercasing, punctuation stripping, and the
//! shipped stopword list.

use std::collections::HashSet;
use std::sync::OnceLock;

const STOPWORDS_ASSET: &str = include_str!("../assets/stopwords.txt");

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_ASSET
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Fold typographic quotes to ASCII and lowercase.
pub fn fold(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{02BC}' => '\'',
            '\u{201C}' | '\u{201D}' => '"',
            other => other,
        })
        .collect::<String>()
        .to_lowercase()
}

/// Lowercase, drop punctuation, and collapse whitespace.
///
/// Apostrophes are removed without a space so that "don't" becomes "dont";
/// every other non-alphanumeric character becomes a separator.
pub fn normalize(text: &str) -> String {
    let folded = fold(text);
    let mut out = String::with_capacity(folded.len());
    for c in folded.chars() {
        if c.is_alphanumeric() {
            out.push(c);
        } else if c == '\'' {
            continue;
        } else {
            out.push(' ');
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokens(text: &str) -> Vec<String> {
    normalize(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Tokens with stopwords removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokens(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .collect()
}

/// Whole-word (token sequence) containment on normalized text.
pub fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    let hay = format!(" {} ", normalize(haystack));
    let needle = normalize(phrase);
    if needle.is_empty() {
        return false;
    }
    hay.contains(&format!(" {needle} "))
}

/// Last `{...}` object in the text that parses as JSON.
pub fn last_json_object(text: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    let mut end = text.len();
    while let Some(close) = text[..end].rfind('}') {
        let mut start = close;
        while let Some(open) = text[..start].rfind('{') {
            if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(&text[open..=close]) {
                return Some(map);
            }
            start = open;
        }
        end = close;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_strips_punctuation() {
        assert_eq!(normalize("It is a Blue-Whale!"), "it is a blue whale");
        assert_eq!(normalize("I don\u{2019}t know."), "i dont know");
        assert_eq!(normalize("  "), "");
    }

    #[test]
    fn content_tokens_drop_stopwords() {
        assert_eq!(content_tokens("a red car"), vec!["red", "car"]);
        assert_eq!(content_tokens("the of and"), Vec::<String>::new());
    }

    #[test]
    fn phrase_match_respects_word_boundaries() {
        assert!(contains_phrase("Price of the BMW M4", "bmw m4"));
        assert!(!contains_phrase("caravan", "car"));
    }

    #[test]
    fn json_object_search() {
        let m = last_json_object("x {\"a\": 1} y {bad} {\"b\": {\"c\": 2}} z").unwrap();
        assert!(m.contains_key("b"));
        assert!(last_json_object("no json").is_none());
    }
}
