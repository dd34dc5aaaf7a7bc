use std::sync::{Arc, OnceLock};

use regex::Regex;

use super::{DomainLabel, FlagExtractor, PreAnswerConfig, PreAnswerError, ReasoningTrace};
use crate::answer::TokenStats;
use crate::gateway::{templates, CallContext, Gateway, GatewayError};
use crate::textproc::last_json_object;
use crate::ImageRef;

/// Statement placed in the draft when the model gave no usable answer.
const CANNOT_DETERMINE: &str = "I cannot determine the answer that the query is about.";

/// Raw steps and draft before flag extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub steps: Vec<String>,
    pub draft_answer: String,
}

fn step_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)[.)]\s+(.+?)\s*$").unwrap())
}

fn answer_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:\*\*)?(?:final\s+)?answer(?:\*\*)?\s*:\s*(.+?)\s*$").unwrap()
    })
}

/// Split model output into numbered steps and a draft answer.
///
/// The draft comes from the JSON `answer` field, then the JSON `reasoning`
/// field, then an `Answer:` line, then the last step. `None` when the output
/// has neither steps nor an answer.
pub fn parse_trace(text: &str) -> Option<ParsedTrace> {
    let steps: Vec<String> = text
        .lines()
        .filter_map(|l| step_re().captures(l).map(|c| c[2].to_owned()))
        .collect();
    let json = last_json_object(text);
    let from_json = |key: &str| {
        json.as_ref()
            .and_then(|m| m.get(key))
            .and_then(|v| v.as_str())
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
    };
    let draft = from_json("answer")
        .or_else(|| from_json("reasoning"))
        .or_else(|| {
            text.lines()
                .find_map(|l| answer_line_re().captures(l).map(|c| c[1].to_owned()))
        })
        .or_else(|| steps.last().cloned())?;
    Some(ParsedTrace {
        steps,
        draft_answer: draft,
    })
}

pub(crate) fn finish_trace(
    extractor: &FlagExtractor,
    question: &str,
    domain: &str,
    mut parsed: ParsedTrace,
    stats: Option<TokenStats>,
    max_steps: usize,
) -> ReasoningTrace {
    if parsed.steps.len() > max_steps {
        log::warn!(
            "reasoning trace has {} steps, keeping the first {max_steps}",
            parsed.steps.len()
        );
        parsed.steps.truncate(max_steps);
    }
    if let Some(first) = parsed.steps.first() {
        if !first
            .trim_start()
            .to_lowercase()
            .starts_with("the exact name of the object")
        {
            log::warn!("first reasoning step does not name the object: {first:?}");
        }
    }
    let flags = extractor.extract(question, &parsed.steps, &parsed.draft_answer);
    let unanswerable = flags.has_idk;
    let mut draft_answer = parsed.draft_answer;
    if unanswerable && !extractor.matches_unanswerable(&draft_answer) {
        draft_answer = crate::FALLBACK_ANSWER.to_owned();
    }
    ReasoningTrace {
        question: question.to_owned(),
        domain: domain.to_owned(),
        object_name: extractor.object_name(&parsed.steps),
        steps: parsed.steps,
        draft_answer,
        unanswerable,
        flags,
        stats,
    }
}

/// Drafts a domain-aware answer with an explicit reasoning trace.
pub struct DcotAgent {
    gateway: Arc<Gateway>,
    config: Arc<PreAnswerConfig>,
    extractor: FlagExtractor,
}

impl DcotAgent {
    pub fn new(gateway: Arc<Gateway>, config: Arc<PreAnswerConfig>) -> Self {
        let extractor = FlagExtractor::new(&config);
        Self {
            gateway,
            config,
            extractor,
        }
    }

    pub fn extractor(&self) -> &FlagExtractor {
        &self.extractor
    }

    /// Conservative trace: unanswerable with the idk flag set.
    pub fn failed_trace(&self, question: &str, domain: &str) -> ReasoningTrace {
        let mut trace = finish_trace(
            &self.extractor,
            question,
            domain,
            ParsedTrace {
                steps: Vec::new(),
                draft_answer: CANNOT_DETERMINE.to_owned(),
            },
            None,
            self.config.max_steps,
        );
        trace.unanswerable = true;
        trace.flags.has_idk = true;
        trace
    }

    pub fn preanswer(
        &self,
        ctx: &CallContext,
        question: &str,
        image: Option<&ImageRef>,
        domain: &DomainLabel,
    ) -> Result<ReasoningTrace, PreAnswerError> {
        let icl = self
            .config
            .icl_examples
            .get(&domain.name)
            .cloned()
            .unwrap_or_default();
        let request = ctx
            .request(templates::EVALUATOR)
            .slot("query", question)
            .slot("domain", domain.name.clone())
            .slot("icl_examples", icl)
            .image(image.cloned());
        let response = match self.gateway.generate_within(&request, ctx.deadline) {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Err(PreAnswerError::Timeout),
            Err(e @ GatewayError::UnknownFixture { .. }) | Err(e) => {
                log::warn!("pre-answer call failed, using conservative trace: {e}");
                return Ok(self.failed_trace(question, &domain.name));
            }
        };
        let stats = TokenStats::from_probs(&response.token_probs);
        match parse_trace(&response.text) {
            Some(parsed) => Ok(finish_trace(
                &self.extractor,
                question,
                &domain.name,
                parsed,
                stats,
                self.config.max_steps,
            )),
            None => {
                log::warn!("could not parse pre-answer output");
                let mut t = self.failed_trace(question, &domain.name);
                t.stats = stats;
                Ok(t)
            }
        }
    }
}
