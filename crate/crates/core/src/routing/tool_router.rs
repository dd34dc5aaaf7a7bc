use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{templates, CallContext, Gateway};
use crate::preanswer::ReasoningTrace;
use crate::textproc::contains_phrase;
use crate::ImageRef;

/// Category whose objects are not identified through image search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionCategory {
    pub name: String,
    /// Words that place an object, domain or question in the category.
    pub keywords: Vec<String>,
    /// Domains that belong to the category outright.
    #[serde(default)]
    pub domains: Vec<String>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| (*s).to_owned()).collect()
}

/// Cue lexicons and exclusion lists for the tool router.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingConfig {
    /// Phrases that mark a question as needing facts not visible in the image.
    pub external_fact_cues: Vec<String>,
    /// Phrases that mark a scientific calculation.
    pub science_cues: Vec<String>,
    pub translation_cues: Vec<String>,
    /// Domains handled as scientific calculation.
    pub science_domains: Vec<String>,
    pub exclusions: Vec<ExclusionCategory>,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            external_fact_cues: strings(&[
                "price",
                "cost",
                "how much",
                "worth",
                "value",
                "when",
                "which year",
                "what year",
                "year",
                "founded",
                "founder",
                "history",
                "who",
                "made by",
                "manufacturer",
                "manufactured",
                "specification",
                "specifications",
                "specs",
                "statistics",
                "population",
                "how tall",
                "height",
                "weight",
                "horsepower",
                "top speed",
                "calories",
                "nutrition",
                "author",
                "wrote",
                "written by",
                "released",
                "release",
                "born",
                "origin",
                "native",
                "lifespan",
                "live",
                "record",
                "award",
                "production",
                "produced",
                "invented",
                "built",
                "designed",
                "sold",
                "rating",
                "reviews",
            ]),
            science_cues: strings(&[
                "calculate",
                "compute",
                "solve",
                "equation",
                "integral",
                "derivative",
                "math",
                "physics",
                "formula",
                "simplify",
                "evaluate the expression",
            ]),
            translation_cues: strings(&[
                "translate",
                "translation",
                "in english",
                "mean in",
                "meaning in",
            ]),
            science_domains: strings(&["math"]),
            exclusions: vec![
                ExclusionCategory {
                    name: "book".into(),
                    keywords: strings(&[
                        "book",
                        "books",
                        "novel",
                        "paperback",
                        "hardcover",
                        "textbook",
                        "magazine",
                    ]),
                    domains: strings(&["books"]),
                },
                ExclusionCategory {
                    name: "logo-bearing packaged goods".into(),
                    keywords: strings(&[
                        "package",
                        "packaged",
                        "packaging",
                        "box",
                        "bottle",
                        "can",
                        "jar",
                        "packet",
                        "carton",
                        "snack",
                        "cereal",
                        "label",
                        "logo",
                        "wrapper",
                        "bag of",
                    ]),
                    domains: Vec::new(),
                },
                ExclusionCategory {
                    name: "plant".into(),
                    keywords: strings(&[
                        "plant",
                        "plants",
                        "flower",
                        "flowers",
                        "tree",
                        "trees",
                        "leaf",
                        "leaves",
                        "succulent",
                        "cactus",
                        "shrub",
                        "houseplant",
                    ]),
                    domains: strings(&["plant"]),
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDecision {
    pub need_image_search: bool,
    pub need_text_search: bool,
    /// Exactly one sentence explaining the flags.
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolDecisionParseError {
    #[error("missing `Tool calling decision:` marker")]
    MissingMarker,
    #[error("invalid decision JSON: {0}")]
    InvalidJson(String),
    #[error("decision rationale must be a single sentence")]
    Rationale,
}

#[derive(Deserialize)]
struct Flags {
    need_image_search: bool,
    need_text_search: bool,
}

fn sentence_break() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[.!?]\s+\S").unwrap())
}

fn is_single_sentence(text: &str) -> bool {
    let t = text.trim();
    !t.is_empty() && !t.contains('\n') && !sentence_break().is_match(t)
}

impl ToolDecision {
    /// Output-contract rendering: the rationale sentence, then the flags.
    pub fn render(&self) -> String {
        format!(
            "Decision logic: {}\n\nTool calling decision: {{\"need_image_search\": {}, \"need_text_search\": {}}}",
            self.rationale, self.need_image_search, self.need_text_search
        )
    }

    pub fn parse(text: &str) -> Result<Self, ToolDecisionParseError> {
        const MARKER: &str = "Tool calling decision:";
        let at = text
            .find(MARKER)
            .ok_or(ToolDecisionParseError::MissingMarker)?;
        let json_part = text[at + MARKER.len()..].trim();
        let end = json_part.find('}').map_or(json_part.len(), |i| i + 1);
        let flags: Flags = serde_json::from_str(&json_part[..end])
            .map_err(|e| ToolDecisionParseError::InvalidJson(e.to_string()))?;
        let head = text[..at].trim();
        let rationale = head
            .strip_prefix("Decision logic:")
            .unwrap_or(head)
            .trim()
            .to_owned();
        if !is_single_sentence(&rationale) {
            return Err(ToolDecisionParseError::Rationale);
        }
        Ok(Self {
            need_image_search: flags.need_image_search,
            need_text_search: flags.need_text_search,
            rationale,
        })
    }
}

/// Chooses retrieval modalities for a query.
pub trait ToolRouter: Send + Sync {
    fn route(
        &self,
        ctx: &CallContext,
        query: &str,
        trace: &ReasoningTrace,
        image: Option<&ImageRef>,
    ) -> ToolDecision;
}

/// Local replica of the four-step decision logic.
#[derive(Debug, Clone, Default)]
pub struct RuleToolRouter {
    config: RoutingConfig,
}

impl RuleToolRouter {
    pub fn new(config: RoutingConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &RoutingConfig {
        &self.config
    }

    fn any_cue(cues: &[String], text: &str) -> bool {
        cues.iter().any(|c| contains_phrase(text, c))
    }

    /// Exclusion category of the object, read from its name, the domain and
    /// the question.
    pub fn exclusion(&self, query: &str, trace: &ReasoningTrace) -> Option<&str> {
        let object = trace.object_name.as_deref().unwrap_or("");
        self.config
            .exclusions
            .iter()
            .find(|c| {
                c.domains.iter().any(|d| d == &trace.domain)
                    || Self::any_cue(&c.keywords, object)
                    || Self::any_cue(&c.keywords, query)
            })
            .map(|c| c.name.as_str())
    }

    pub fn is_science_or_translation(&self, query: &str, trace: &ReasoningTrace) -> bool {
        self.config
            .science_domains
            .iter()
            .any(|d| d == &trace.domain)
            || Self::any_cue(&self.config.science_cues, query)
            || Self::any_cue(&self.config.translation_cues, query)
    }

    pub fn decide(
        &self,
        query: &str,
        trace: &ReasoningTrace,
        image: Option<&ImageRef>,
    ) -> ToolDecision {
        if self.is_science_or_translation(query, trace) {
            return ToolDecision {
                need_image_search: false,
                need_text_search: false,
                rationale: "The question is a scientific calculation or a translation, so neither search is needed."
                    .into(),
            };
        }
        let identified = trace.flags.is_named_object;
        let external =
            Self::any_cue(&self.config.external_fact_cues, query) || trace.flags.open_world_cue;
        let exclusion = self.exclusion(query, trace);

        let need_image_search = image.is_some() && !identified && exclusion.is_none();
        let image_part = match (exclusion, identified, image.is_some()) {
            (Some(cat), _, _) => format!("the object is a {cat}, so image search is skipped"),
            (None, true, _) => {
                "the object already has a specific name, so image search is skipped".to_owned()
            }
            (None, false, false) => {
                "there is no image to search with, so image search is skipped".to_owned()
            }
            (None, false, true) => {
                "the object is only known generically, so image search is needed".to_owned()
            }
        };
        let text_part = if external {
            "the question needs facts not visible in the image, so text search is needed"
        } else {
            "the answer is visible in the image, so text search is skipped"
        };
        let mut rationale = format!("{image_part} and {text_part}.");
        rationale[..1].make_ascii_uppercase();
        ToolDecision {
            need_image_search,
            need_text_search: external,
            rationale,
        }
    }
}

impl ToolRouter for RuleToolRouter {
    fn route(
        &self,
        _ctx: &CallContext,
        query: &str,
        trace: &ReasoningTrace,
        image: Option<&ImageRef>,
    ) -> ToolDecision {
        self.decide(query, trace, image)
    }
}

/// Asks the model for the decision and falls back to the local rules when
/// the reply breaks the output contract. The category exclusion is enforced
/// on model decisions too.
pub struct GatewayToolRouter {
    gateway: Arc<Gateway>,
    rules: RuleToolRouter,
}

impl GatewayToolRouter {
    pub fn new(gateway: Arc<Gateway>, config: RoutingConfig) -> Self {
        Self {
            gateway,
            rules: RuleToolRouter::new(config),
        }
    }
}

impl ToolRouter for GatewayToolRouter {
    fn route(
        &self,
        ctx: &CallContext,
        query: &str,
        trace: &ReasoningTrace,
        image: Option<&ImageRef>,
    ) -> ToolDecision {
        let request = ctx
            .request(templates::TOOL_ROUTER)
            .slot("query", query)
            .slot("reasoning", trace.text())
            .image(image.cloned());
        let parsed = self
            .gateway
            .generate_within(&request, ctx.deadline)
            .map_err(|e| e.to_string())
            .and_then(|r| ToolDecision::parse(&r.text).map_err(|e| e.to_string()));
        match parsed {
            Ok(mut d) => {
                if self.rules.exclusion(query, trace).is_some() {
                    d.need_image_search = false;
                }
                d
            }
            Err(e) => {
                log::warn!("tool router reply unusable, using local rules: {e}");
                self.rules.decide(query, trace, image)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preanswer::{FlagExtractor, PreAnswerConfig};

    fn trace(question: &str, domain: &str, first: &str, draft: &str) -> ReasoningTrace {
        let ex = FlagExtractor::new(&PreAnswerConfig::default());
        ReasoningTrace::from_parts(&ex, question, domain, vec![first.to_owned()], draft)
    }

    fn img() -> ImageRef {
        ImageRef::new("img")
    }

    #[test]
    fn generic_statue_needs_both() {
        let q = "Who made this statue?";
        let t = trace(
            q,
            "other",
            &format!("The exact name of the object that the query \"{q}\" is about is statue."),
            "unknown sculptor",
        );
        let d = RuleToolRouter::default().decide(q, &t, Some(&img()));
        assert!(d.need_image_search && d.need_text_search, "{d:?}");
    }

    #[test]
    fn translation_needs_neither() {
        let q = "Translate this sign";
        let t = trace(
            q,
            "text",
            "The exact name of the object in the image is sign.",
            "Exit",
        );
        let d = RuleToolRouter::default().decide(q, &t, Some(&img()));
        assert!(!d.need_image_search && !d.need_text_search);
    }

    #[test]
    fn book_skips_image_search() {
        let q = "Where was the author of this born?";
        let t = trace(
            q,
            "books",
            "The exact name of the object in the image is book.",
            "unknown",
        );
        let d = RuleToolRouter::default().decide(q, &t, Some(&img()));
        assert!(!d.need_image_search && d.need_text_search);
        assert!(d.rationale.contains("book"));
    }

    #[test]
    fn render_parse_round_trip() {
        let q = "What is the price of this?";
        let t = trace(
            q,
            "shopping",
            "The exact name of the object in the image is jacket.",
            "about $50",
        );
        let d = RuleToolRouter::default().decide(q, &t, Some(&img()));
        assert!(is_single_sentence(&d.rationale));
        assert_eq!(ToolDecision::parse(&d.render()).unwrap(), d);
    }

    #[test]
    fn parse_rejects_two_sentences() {
        let text = "Decision logic: First. Second.\n\nTool calling decision: {\"need_image_search\": true, \"need_text_search\": false}";
        assert_eq!(
            ToolDecision::parse(text),
            Err(ToolDecisionParseError::Rationale)
        );
        assert_eq!(
            ToolDecision::parse("nothing"),
            Err(ToolDecisionParseError::MissingMarker)
        );
    }
}
