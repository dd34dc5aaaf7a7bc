use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::search::{HitPayload, KgEntry, SearchHit, Source, WebDoc};

/// Retrieval unit scored by the reranker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub text: String,
    pub source: Source,
    pub doc_url: String,
    /// Order of the chunk within its source document.
    pub position: usize,
    pub chunk_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub max_chunk_chars: usize,
    pub overlap: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            max_chunk_chars: 512,
            overlap: 64,
        }
    }
}

/// Character spans `[start, end)` of at most `max` chars, consecutive spans
/// sharing `overlap` chars.
pub fn span_bounds(len: usize, max: usize, overlap: usize) -> Vec<(usize, usize)> {
    let max = max.max(1);
    let stride = max.saturating_sub(overlap).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + max).min(len);
        out.push((start, end));
        if end == len {
            break;
        }
        start += stride;
    }
    out
}

fn split_spans(text: &str, cfg: &ChunkingConfig) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    span_bounds(chars.len(), cfg.max_chunk_chars, cfg.overlap)
        .into_iter()
        .map(|(s, e)| chars[s..e].iter().collect::<String>().trim().to_owned())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Merge a section's paragraphs up to the size limit; oversized paragraphs
/// are cut into overlapping spans.
fn pack_section(paragraphs: &[String], cfg: &ChunkingConfig, out: &mut Vec<String>) {
    let mut current = String::new();
    for p in paragraphs {
        let plen = p.chars().count();
        if plen > cfg.max_chunk_chars {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            out.extend(split_spans(p, cfg));
            continue;
        }
        let joined = current.chars().count() + 1 + plen;
        if !current.is_empty() && joined > cfg.max_chunk_chars {
            out.push(std::mem::take(&mut current));
        }
        if !current.is_empty() {
            current.push('\n');
        }
        current.push_str(p);
    }
    if !current.is_empty() {
        out.push(current);
    }
}

fn block_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)<\s*(/?)\s*(h[1-6]|p|div|li|ul|ol|br|tr|table|section|article|header|footer|title)\b[^>]*>")
            .unwrap()
    })
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)<[^>]*>").unwrap())
}

fn script_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)<(script|style)\b.*?</\s*(script|style)\s*>").unwrap())
}

fn clean_inline(text: &str) -> String {
    let stripped = tag_re().replace_all(text, " ");
    let decoded = stripped
        .replace("&nbsp;", " ")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&");
    decoded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Sections of paragraphs; every heading opens a new section.
pub(crate) fn html_sections(html: &str) -> Vec<Vec<String>> {
    let html = script_re().replace_all(html, " ");
    let mut sections: Vec<Vec<String>> = vec![Vec::new()];
    let mut last = 0;
    let mut in_heading = false;
    let push = |text: &str, heading: bool, sections: &mut Vec<Vec<String>>| {
        let t = clean_inline(text);
        if t.is_empty() {
            return;
        }
        if heading && !sections.last().is_some_and(Vec::is_empty) {
            sections.push(Vec::new());
        }
        sections.last_mut().expect("at least one section").push(t);
    };
    for m in block_re().captures_iter(&html) {
        let whole = m.get(0).unwrap();
        push(&html[last..whole.start()], in_heading, &mut sections);
        last = whole.end();
        let closing = !m[1].is_empty();
        let is_heading = m[2].to_lowercase().starts_with('h') && m[2].len() == 2;
        if is_heading {
            in_heading = !closing;
        }
    }
    push(&html[last..], in_heading, &mut sections);
    sections.retain(|s| !s.is_empty());
    sections
}

/// Plain-text sections: paragraphs split on blank lines, one section.
fn text_sections(text: &str) -> Vec<Vec<String>> {
    let paragraphs: Vec<String> = text
        .split("\n\n")
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|p| !p.is_empty())
        .collect();
    if paragraphs.is_empty() {
        Vec::new()
    } else {
        vec![paragraphs]
    }
}

/// Attribute block as sentences of the form "The <key> of <entity> is <value>."
pub fn render_attributes(entry: &KgEntry) -> String {
    if entry.attributes.is_empty() {
        return entry.entity_name.clone();
    }
    entry
        .attributes
        .iter()
        .map(|(k, v)| format!("The {k} of {} is {v}.", entry.entity_name))
        .collect::<Vec<_>>()
        .join(" ")
}

fn web_pieces(doc: &WebDoc, cfg: &ChunkingConfig) -> Vec<String> {
    let sections = if doc.html.trim().is_empty() {
        text_sections(&doc.snippet)
    } else {
        html_sections(&doc.html)
    };
    let mut out = Vec::new();
    for s in &sections {
        pack_section(s, cfg, &mut out);
    }
    out
}

fn kg_pieces(entry: &KgEntry, cfg: &ChunkingConfig) -> Vec<String> {
    let mut out = Vec::new();
    pack_section(&[render_attributes(entry)], cfg, &mut out);
    out
}

/// Chunk every hit. Repeated `(source, url)` pairs are chunked once.
pub fn chunk_evidence(hits: &[SearchHit], cfg: &ChunkingConfig) -> Vec<Chunk> {
    let mut seen = std::collections::HashSet::new();
    let mut chunks = Vec::new();
    for hit in hits {
        if !seen.insert((hit.source, hit.url().to_owned())) {
            continue;
        }
        let pieces = match &hit.payload {
            HitPayload::Web(d) => web_pieces(d, cfg),
            HitPayload::Kg(e) => kg_pieces(e, cfg),
        };
        for (position, text) in pieces.into_iter().enumerate() {
            chunks.push(Chunk {
                chunk_id: format!("{}:{}#{position}", hit.source.as_str(), hit.url()),
                text,
                source: hit.source,
                doc_url: hit.url().to_owned(),
                position,
            });
        }
    }
    chunks
}
