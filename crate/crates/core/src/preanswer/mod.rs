//! Pre-answer: classify the query's domain, then draft a domain-aware
//! step-by-step answer whose trace drives routing.

mod dcot;
mod domain;
mod flags;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::answer::TokenStats;

pub use dcot::{parse_trace, DcotAgent, ParsedTrace};
pub use domain::{
    DomainClassifier, DomainLabel, GatewayDomainClassifier, KeywordCentroidClassifier,
};
pub use flags::{FeatureFlags, FlagExtractor};

/// Label every taxonomy must contain.
pub const CATCH_ALL_DOMAIN: &str = "other";

/// Maximum reasoning steps kept from a draft.
pub const MAX_STEPS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum PreAnswerError {
    #[error("pre-answer timed out")]
    Timeout,
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    /// Phrases that vote for this domain when present in the query.
    #[serde(default)]
    pub keywords: Vec<String>,
    /// Extra descriptive text folded into the domain centroid.
    #[serde(default)]
    pub descriptors: String,
}

fn domain_spec(name: &str, keywords: &[&str], descriptors: &str) -> DomainSpec {
    DomainSpec {
        name: name.into(),
        keywords: keywords.iter().map(|s| s.to_string()).collect(),
        descriptors: descriptors.into(),
    }
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreAnswerConfig {
    pub domains: Vec<DomainSpec>,
    pub unanswerable_phrases: Vec<String>,
    pub speculative_cues: Vec<String>,
    pub ocr_cues: Vec<String>,
    pub open_world_cues: Vec<String>,
    pub max_steps: usize,
    /// Domain-specific in-context examples, keyed by domain name.
    pub icl_examples: BTreeMap<String, String>,
}

impl Default for PreAnswerConfig {
    fn default() -> Self {
        let icl: BTreeMap<String, String> =
            toml::from_str(include_str!("../../assets/icl_examples.toml"))
                .expect("shipped ICL asset parses");
        Self {
            domains: vec![
                domain_spec(
                    "books",
                    &[
                        "book",
                        "novel",
                        "author",
                        "wrote",
                        "publisher",
                        "chapter",
                        "isbn",
                    ],
                    "book cover novel author literature reading library",
                ),
                domain_spec(
                    "food",
                    &[
                        "food",
                        "dish",
                        "recipe",
                        "calories",
                        "cafe",
                        "restaurant",
                        "eat",
                        "drink",
                        "menu",
                        "ingredient",
                        "coffee",
                    ],
                    "meal dish restaurant cafe cuisine cooking ingredient beverage",
                ),
                domain_spec(
                    "shopping",
                    &[
                        "price", "cost", "buy", "brand", "store", "shop", "sale", "product",
                        "purchase",
                    ],
                    "retail product store shopping brand price packaging",
                ),
                domain_spec(
                    "vehicles",
                    &[
                        "car",
                        "truck",
                        "vehicle",
                        "bike",
                        "motorcycle",
                        "bus",
                        "engine",
                        "horsepower",
                        "drive",
                    ],
                    "automobile car model manufacturer engine road vehicle",
                ),
                domain_spec(
                    "animal",
                    &[
                        "animal", "dog", "cat", "bird", "breed", "species", "fish", "pet",
                        "wildlife",
                    ],
                    "animal species breed wildlife pet mammal bird",
                ),
                domain_spec(
                    "plant",
                    &[
                        "plant",
                        "flower",
                        "tree",
                        "leaf",
                        "leaves",
                        "succulent",
                        "garden",
                        "bloom",
                    ],
                    "plant flower tree botany leaf garden",
                ),
                domain_spec(
                    "math",
                    &[
                        "integral of",
                        "derivative",
                        "equation",
                        "solve",
                        "calculate",
                        "sum of",
                        "formula",
                        "arithmetic",
                    ],
                    "mathematics equation formula calculation algebra",
                ),
                domain_spec(
                    "text",
                    &[
                        "written",
                        "say",
                        "says",
                        "sign",
                        "translate",
                        "read",
                        "text",
                        "label",
                        "word",
                    ],
                    "text sign writing words label inscription",
                ),
                domain_spec(CATCH_ALL_DOMAIN, &[], ""),
            ],
            unanswerable_phrases: strings(&[
                "i don't know",
                "i cannot determine",
                "cannot be determined",
                "unable to identify",
            ]),
            speculative_cues: strings(&[
                "likely",
                "probably",
                "possibly",
                "perhaps",
                "might",
                "may be",
                "appears to be",
                "seems",
                "i think",
                "i believe",
                "not sure",
                "uncertain",
                "could be",
                "approximately",
                "estimated",
            ]),
            ocr_cues: strings(&[
                "written on",
                "reads",
                "text on",
                "the text",
                "says",
                "printed",
                "inscription",
                "label reads",
                "spelled",
            ]),
            open_world_cues: strings(&[
                "price",
                "cost",
                "how much",
                "when",
                "what year",
                "which year",
                "founded",
                "founder",
                "date",
                "how many",
                "population",
                "statistics",
                "history",
                "released",
                "release",
                "specifications",
                "who",
                "net worth",
                "revenue",
                "manufacturer",
                "invented",
            ]),
            max_steps: MAX_STEPS,
            icl_examples: icl,
        }
    }
}

impl PreAnswerConfig {
    pub fn validate(&self) -> Result<(), PreAnswerError> {
        if self.domains.is_empty() {
            return Err(PreAnswerError::InvalidTaxonomy("taxonomy is empty".into()));
        }
        if !self.domains.iter().any(|d| d.name == CATCH_ALL_DOMAIN) {
            return Err(PreAnswerError::InvalidTaxonomy(format!(
                "taxonomy lacks `{CATCH_ALL_DOMAIN}`"
            )));
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> Vec<&str> {
        self.domains.iter().map(|d| d.name.as_str()).collect()
    }
}

/// Draft answer plus its reasoning steps and routing features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub question: String,
    pub domain: String,
    pub steps: Vec<String>,
    pub draft_answer: String,
    /// Object named by the first reasoning step, when one was identified.
    pub object_name: Option<String>,
    pub unanswerable: bool,
    pub flags: FeatureFlags,
    /// Token statistics of the draft generation, used when the draft itself
    /// is verified.
    pub stats: Option<TokenStats>,
}

impl ReasoningTrace {
    /// Steps and draft rendered as prompt text.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, s));
        }
        out.push_str(&format!("Draft answer: {}", self.draft_answer));
        out
    }

    /// Build a trace from already-split parts, running flag extraction.
    pub fn from_parts(
        extractor: &FlagExtractor,
        question: &str,
        domain: &str,
        steps: Vec<String>,
        draft_answer: &str,
    ) -> Self {
        let parsed = ParsedTrace {
            steps,
            draft_answer: draft_answer.to_owned(),
        };
        dcot::finish_trace(extractor, question, domain, parsed, None, MAX_STEPS)
    }
}
