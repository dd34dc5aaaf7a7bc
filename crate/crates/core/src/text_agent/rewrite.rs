use std::sync::OnceLock;

use regex::{Captures, Regex};

use crate::textproc::{contains_phrase, content_tokens, is_stopword};

fn deictic_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(this|these|those|that|its|it|they|them)\b(\s+([A-Za-z][A-Za-z0-9-]*))?")
            .unwrap()
    })
}

fn wh_prefix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^(?:what['\u{2019}]s|whats|what\s+is|what\s+are|what['\u{2019}]re)\s+(?:(?:the|a|an)\s+)?").unwrap())
}

fn split_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\?\s+|;\s*|,?\s+and\s+(?:then\s+)?").unwrap())
}

/// The word after a determiner is taken as its noun unless it is a
/// function word.
fn is_noun_like(word: &str) -> bool {
    !is_stopword(&word.to_lowercase())
}

fn at_end(text: &str, from: usize) -> bool {
    text[from..]
        .trim_matches(|c: char| c.is_whitespace() || "?.!".contains(c))
        .is_empty()
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Replace deictic words with a reference to the visual context.
///
/// `with_article` controls whether the replacement reads "the <context>".
/// "that" is treated as deictic only at the end of the question; elsewhere
/// it is usually a relative pronoun. Returns the rewritten text and whether
/// anything changed.
fn replace_deictics(
    text: &str,
    context: &str,
    with_article: bool,
    first_only: bool,
) -> (String, bool) {
    let context = context.trim();
    let reference = if with_article && !context.to_lowercase().starts_with("the ") {
        format!("the {context}")
    } else {
        context.to_owned()
    };
    let mut changed = false;
    let out = deictic_re().replace_all(text, |c: &Captures<'_>| {
        let whole = c.get(0).unwrap();
        if first_only && changed {
            return whole.as_str().to_owned();
        }
        let word = c.get(1).unwrap();
        let lower = word.as_str().to_lowercase();
        let next = c.get(3).map(|m| m.as_str());
        let tail = c.get(2).map_or("", |m| m.as_str());
        let replaced = match lower.as_str() {
            "that" if !at_end(text, word.end()) => return whole.as_str().to_owned(),
            "this" | "these" | "those" | "that" => match next {
                Some(n) if is_noun_like(n) => reference.clone(),
                _ => format!("{reference}{tail}"),
            },
            "its" => format!("{reference}'s{tail}"),
            _ => format!("{reference}{tail}"),
        };
        changed = true;
        if word.start() == 0 {
            capitalize(&replaced)
        } else {
            replaced
        }
    });
    (out.into_owned(), changed)
}

/// Resolve pronouns and deictic references with `visual_context`.
pub fn enhance(text: &str, visual_context: &str) -> String {
    if visual_context.trim().is_empty() {
        return text.to_owned();
    }
    replace_deictics(text, visual_context, true, false).0
}

/// Object-aware query text. The result always contains `entity`.
///
/// Queries that already name the entity are kept as they are. Otherwise a
/// leading "what is the" is dropped and the first deictic reference is
/// replaced by the entity, or the entity is appended.
pub fn fuse_object_label(query: &str, entity: &str) -> String {
    let query = query.trim();
    let entity = entity.trim();
    if query.is_empty() {
        return entity.to_owned();
    }
    if contains_phrase(query, entity) {
        return query.to_owned();
    }
    let body = query.trim_end_matches(|c: char| "?.!".contains(c)).trim();
    let body = capitalize(&wh_prefix_re().replace(body, ""));
    let (fused, changed) = replace_deictics(&body, entity, false, true);
    if changed {
        fused
    } else {
        format!("{body} {entity}")
    }
}

/// Split on question breaks, semicolons and conjunctions. Pieces need two
/// content words; with fewer than two pieces the query stays whole.
pub fn rule_split(query: &str) -> Vec<String> {
    let pieces: Vec<String> = split_re()
        .split(query)
        .map(|p| p.trim().to_owned())
        .filter(|p| content_tokens(p).len() >= 2)
        .collect();
    if pieces.len() < 2 {
        vec![query.trim().to_owned()]
    } else {
        pieces
    }
}
