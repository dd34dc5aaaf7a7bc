use std::fmt;

use serde::{Deserialize, Serialize};

use crate::preanswer::{FeatureFlags, ReasoningTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    DirectOutput,
    SearchVerify,
    RagAugment,
}

impl Branch {
    pub const ALL: [Branch; 3] = [
        Branch::DirectOutput,
        Branch::SearchVerify,
        Branch::RagAugment,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::DirectOutput => "direct_output",
            Branch::SearchVerify => "search_verify",
            Branch::RagAugment => "rag_augment",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rule of the cascade that fired, in precedence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteRule {
    Unanswered,
    SelfContained,
    NeedsConfirmation,
    Default,
}

impl RouteRule {
    fn rationale(&self, f: &FeatureFlags) -> String {
        match self {
            RouteRule::Unanswered if f.has_idk => {
                "unanswered: the reasoning trace could not answer the question".into()
            }
            RouteRule::Unanswered => "unanswered: the question asks for open-world facts about an unidentified object".into(),
            RouteRule::SelfContained => {
                let kind = if f.is_ocr_answer {
                    "visible text"
                } else if f.is_numeric_answer {
                    "a numeric value"
                } else {
                    "a named object"
                };
                format!("self_contained: the answer is {kind} read from the image with no uncertainty")
            }
            RouteRule::NeedsConfirmation if f.speculative => {
                "needs_confirmation: the draft is hedged and should be checked against text evidence".into()
            }
            RouteRule::NeedsConfirmation => {
                "needs_confirmation: the draft relies on external facts that should be checked".into()
            }
            RouteRule::Default => "default: no rule matched, verifying the draft".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub branch: Branch,
    pub rule: RouteRule,
    pub rationale: String,
    pub features: FeatureFlags,
}

/// Ordered rule cascade, a pure function of the trace flags.
///
/// 1. No answer, or open-world cue without a known identity: RAG.
/// 2. Self-contained numeric, OCR or named answer without hedging or
///    external cues: direct output.
/// 3. Hedged draft or external-fact cue: verify.
/// 4. Anything else: verify.
pub fn route_search(trace: &ReasoningTrace) -> RouteDecision {
    route_flags(trace.flags)
}

pub(crate) fn route_flags(f: FeatureFlags) -> RouteDecision {
    let (branch, rule) = if f.has_idk || (f.open_world_cue && !f.is_named_object) {
        (Branch::RagAugment, RouteRule::Unanswered)
    } else if (f.is_numeric_answer || f.is_ocr_answer || f.is_named_object)
        && !f.speculative
        && !f.open_world_cue
    {
        (Branch::DirectOutput, RouteRule::SelfContained)
    } else if f.speculative || f.open_world_cue {
        (Branch::SearchVerify, RouteRule::NeedsConfirmation)
    } else {
        (Branch::SearchVerify, RouteRule::Default)
    };
    RouteDecision {
        branch,
        rule,
        rationale: rule.rationale(&f),
        features: f,
    }
}
