use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PreAnswerConfig;
use crate::textproc::{contains_phrase, fold};

/// Routing features read off a reasoning trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    pub has_idk: bool,
    pub is_numeric_answer: bool,
    pub is_ocr_answer: bool,
    pub is_named_object: bool,
    pub speculative: bool,
    pub open_world_cue: bool,
}

/// Deterministic flag extraction from trace text.
#[derive(Debug, Clone)]
pub struct FlagExtractor {
    unanswerable: Vec<String>,
    speculative: Vec<String>,
    ocr: Vec<String>,
    open_world: Vec<String>,
}

fn re(pattern: &str) -> Regex {
    Regex::new(pattern).expect("static regex")
}

fn query_echo() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| re(r#"(?i)the query\s*"[^"]*"\s*is about"#))
}

fn object_name_re() -> &'static [Regex; 2] {
    static RE: OnceLock<[Regex; 2]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            re(r#"(?i)^\s*the exact name of the object\b.*?\bis about is\s+(.+?)\s*\.?\s*$"#),
            re(r#"(?i)^\s*the exact name of the object(?: in the image)?\s+is\s+(.+?)\s*\.?\s*$"#),
        ]
    })
}

fn unit_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        re(r"(?i)([$€£¥]\s?\d)|(\d(?:[\d,]*\d)?(?:\.\d+)?\s?(%|percent|kg|g|lbs?|pounds|km/h|km|m|cm|mm|mph|miles?|ml|l|liters?|calories|kcal|years?|degrees|°|hp|inches|in|ft|feet|dollars|usd)\b)")
    })
}

fn quoted_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| re(r#""[^"]{1,80}""#))
}

fn capitalized_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| re(r"\b[A-Z][A-Za-z0-9]+"))
}

const LEADING_ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Pull the object name out of a first step of the form "The exact name of
/// the object ... is <name>".
pub fn object_name_from_step(step: &str) -> Option<String> {
    let name = object_name_re().iter().find_map(|r| {
        r.captures(step)
            .map(|c| c[1].trim().trim_matches('"').to_owned())
    })?;
    (!name.is_empty()).then_some(name)
}

/// A name counts as specific when, past any leading article, it carries a
/// capitalized word or a digit (proper noun or model number).
pub fn is_specific_name(name: &str) -> bool {
    let mut words = name.split_whitespace().peekable();
    if let Some(first) = words.peek() {
        if LEADING_ARTICLES.contains(&first.to_lowercase().as_str()) {
            words.next();
        }
    }
    words.any(|w| {
        let mut chars = w.chars();
        chars
            .next()
            .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit())
            || w.chars().any(|c| c.is_ascii_digit())
    })
}

impl FlagExtractor {
    pub fn new(config: &PreAnswerConfig) -> Self {
        Self {
            unanswerable: config
                .unanswerable_phrases
                .iter()
                .map(|p| fold(p))
                .collect(),
            speculative: config.speculative_cues.clone(),
            ocr: config.ocr_cues.clone(),
            open_world: config.open_world_cues.clone(),
        }
    }

    /// True iff `text` contains a configured unanswerable phrase
    /// (case-insensitive).
    pub fn matches_unanswerable(&self, text: &str) -> bool {
        let folded = fold(text);
        self.unanswerable
            .iter()
            .any(|p| folded.contains(p.as_str()))
    }

    /// Object name from the first step, unless that step itself reports
    /// failure.
    pub fn object_name(&self, steps: &[String]) -> Option<String> {
        let first = steps.first()?;
        let name = object_name_from_step(first)?;
        (!self.matches_unanswerable(&name) && !self.matches_unanswerable(first)).then_some(name)
    }

    pub fn extract(&self, question: &str, steps: &[String], draft_answer: &str) -> FeatureFlags {
        let reasoning = steps.join("\n");
        let all = format!("{reasoning}\n{draft_answer}");
        // The first step echoes the query in quotes; that is not visible text.
        let without_echo = query_echo().replace_all(&all, "the query is about");

        let has_idk = self.matches_unanswerable(&all);
        let answer = draft_answer.trim().trim_end_matches('.').replace(',', "");
        let is_numeric_answer =
            !has_idk && (answer.trim().parse::<f64>().is_ok() || unit_re().is_match(draft_answer));
        let is_ocr_answer = !has_idk
            && (self.ocr.iter().any(|c| contains_phrase(&without_echo, c))
                || quoted_re().is_match(&without_echo));
        let is_named_object = self
            .object_name(steps)
            .is_some_and(|n| is_specific_name(&n));
        let speculative = self.speculative.iter().any(|c| contains_phrase(&all, c));

        let open_world_cue = self.open_world.iter().any(|c| contains_phrase(question, c)) || {
            // Capitalized spans past the first word look like named entities.
            let rest = question
                .trim_start()
                .split_once(char::is_whitespace)
                .map_or("", |(_, r)| r);
            capitalized_re().find_iter(rest).any(|m| m.as_str() != "I")
        };

        FeatureFlags {
            has_idk,
            is_numeric_answer,
            is_ocr_answer,
            is_named_object,
            speculative,
            open_world_cue,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex() -> FlagExtractor {
        FlagExtractor::new(&PreAnswerConfig::default())
    }

    fn steps(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn object_name_parsing() {
        assert_eq!(
            object_name_from_step(
                r#"The exact name of the object that the query "What is this?" is about is BMW M4."#
            )
            .as_deref(),
            Some("BMW M4")
        );
        assert_eq!(
            object_name_from_step("The exact name of the object in the image is a red kettle.")
                .as_deref(),
            Some("a red kettle")
        );
        assert_eq!(object_name_from_step("Then, I look at the sign."), None);
    }

    #[test]
    fn specific_names() {
        assert!(is_specific_name("BMW M4"));
        assert!(is_specific_name("The Old Man and the Sea"));
        assert!(is_specific_name("iPhone 13"));
        assert!(!is_specific_name("a statue"));
        assert!(!is_specific_name("umbrella"));
    }

    #[test]
    fn idk_is_case_insensitive() {
        let f = ex().extract(
            "Who founded this cafe?",
            &steps(&["I Cannot Determine the founder that the query is about."]),
            "",
        );
        assert!(f.has_idk);
        let f = ex().extract("q", &[], "I don\u{2019}t know");
        assert!(f.has_idk);
    }

    #[test]
    fn query_echo_is_not_ocr() {
        let f = ex().extract(
            "What is this?",
            &steps(&[r#"The exact name of the object that the query "What is this?" is about is a lamp."#]),
            "a lamp",
        );
        assert!(!f.is_ocr_answer);
        assert!(!f.is_named_object);
    }

    #[test]
    fn numeric_answers() {
        let e = ex();
        assert!(e.extract("q", &[], "48").is_numeric_answer);
        assert!(e.extract("q", &[], "1,200.").is_numeric_answer);
        assert!(e.extract("q", &[], "about 30 km").is_numeric_answer);
        assert!(e.extract("q", &[], "$5").is_numeric_answer);
        assert!(!e.extract("q", &[], "a red car").is_numeric_answer);
    }

    #[test]
    fn open_world_from_question() {
        let e = ex();
        assert!(
            e.extract("What is the price of this?", &[], "x")
                .open_world_cue
        );
        assert!(
            e.extract("Is this the Eiffel Tower?", &[], "x")
                .open_world_cue
        );
        assert!(
            !e.extract("What is written on these umbrellas?", &[], "x")
                .open_world_cue
        );
    }

    #[test]
    fn extraction_is_pure() {
        let e = ex();
        let s = steps(&[
            "The exact name of the object that the query \"q\" is about is Toyota Prius.",
            "It is likely from 2016.",
        ]);
        assert_eq!(
            e.extract("When was it made?", &s, "2016"),
            e.extract("When was it made?", &s, "2016")
        );
    }
}
