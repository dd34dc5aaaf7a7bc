//! Post-answer generation and dual verification.

mod stats;

use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use stats::TokenStats;

use crate::gateway::{templates, CallContext, Gateway, GatewayError};
use crate::rerank::AssembledContext;
use crate::textproc::fold;
use crate::{ImageRef, FALLBACK_ANSWER};

/// In-context examples for the answer generator.
pub const POST_ANSWER_EXAMPLES: &str = include_str!("../../assets/post_answer_examples.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
}

/// Weights and threshold of the linear token-probability gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub w_min: f64,
    pub w_mean: f64,
    pub tau_white: f64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            w_min: 0.5,
            w_mean: 0.5,
            tau_white: 0.75,
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.w_min.is_finite() && self.w_mean.is_finite() && self.tau_white.is_finite()) {
            return Err("verifier weights and threshold must be finite".into());
        }
        let normalized = (self.w_min + self.w_mean - 1.0).abs() < 1e-9
            && self.w_min >= 0.0
            && self.w_mean >= 0.0;
        if normalized && !(0.0..=1.0).contains(&self.tau_white) {
            return Err("tau_white must lie in [0, 1] for normalized weights".into());
        }
        Ok(())
    }
}

pub fn white_box_score(stats: &TokenStats, cfg: &VerifierConfig) -> f64 {
    cfg.w_min * stats.s_min + cfg.w_mean * stats.s_mean
}

pub fn white_box_verify(stats: &TokenStats, cfg: &VerifierConfig) -> bool {
    white_box_score(stats, cfg) >= cfg.tau_white
}

/// Reason and answer of one generation, with its token statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerParts {
    pub reason: String,
    pub answer: String,
    /// `None` when the backend returned no token probabilities.
    pub stats: Option<TokenStats>,
}

impl AnswerParts {
    /// Text handed to the model verifier.
    pub fn render(&self) -> String {
        if self.reason.is_empty() {
            self.answer.clone()
        } else {
            format!("reason: {}\nanswer: {}", self.reason, self.answer)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedAnswer {
    pub reason: String,
    pub answer: String,
    pub stats: Option<TokenStats>,
    pub white_box_pass: bool,
    pub model_verdict: Verdict,
    pub final_answer: String,
    pub fallback: bool,
}

impl VerifiedAnswer {
    /// Fallback produced without running the verifiers.
    pub fn fallback(parts: AnswerParts) -> Self {
        finalize(parts, false, Verdict::Incorrect)
    }
}

fn field_re(name: &str) -> Regex {
    Regex::new(&format!(r"(?im)^\s*[-*]*\s*\**{name}\**\s*:\**\s*(.*)$")).unwrap()
}

fn reason_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| field_re("reason"))
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| field_re("answer"))
}

fn response_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^\s*\**\s*response\s*:?\s*\**\s*:?\s*(.*)$").unwrap())
}

fn says_idk(text: &str) -> bool {
    fold(text).contains("i don't know")
}

/// Split a two-part reply. Without an `answer:` line the whole output is
/// the answer and the reason is empty. A reason of "I don't know" forces
/// the same answer.
pub fn parse_answer(text: &str) -> (String, String) {
    let answer = answer_re().captures(text).map(|c| c[1].trim().to_owned());
    let (reason, answer) = match answer {
        Some(a) => {
            let reason = reason_re()
                .captures(text)
                .map(|c| c[1].trim().to_owned())
                .unwrap_or_default();
            (reason, a)
        }
        None => (String::new(), text.trim().to_owned()),
    };
    if says_idk(&reason) {
        (reason, FALLBACK_ANSWER.to_owned())
    } else {
        (reason, answer)
    }
}

/// Verdict from the `**Response:**` line; anything else is incorrect.
pub fn parse_verdict(text: &str) -> Verdict {
    let Some(c) = response_re().captures(text) else {
        return Verdict::Incorrect;
    };
    let line = c[1].to_lowercase();
    if line.contains("incorrect") {
        Verdict::Incorrect
    } else if line.contains("correct") {
        Verdict::Correct
    } else {
        Verdict::Incorrect
    }
}

/// Accept the answer only when both verifiers pass.
pub fn finalize(
    parts: AnswerParts,
    white_box_pass: bool,
    model_verdict: Verdict,
) -> VerifiedAnswer {
    let accepted = white_box_pass && model_verdict == Verdict::Correct;
    VerifiedAnswer {
        final_answer: if accepted {
            parts.answer.clone()
        } else {
            FALLBACK_ANSWER.to_owned()
        },
        fallback: !accepted,
        reason: parts.reason,
        answer: parts.answer,
        stats: parts.stats,
        white_box_pass,
        model_verdict,
    }
}

/// Evidence-grounded answer generation plus verification.
pub struct PostAnswer {
    gateway: Arc<Gateway>,
    config: VerifierConfig,
}

impl PostAnswer {
    pub fn new(gateway: Arc<Gateway>, config: VerifierConfig) -> Self {
        Self { gateway, config }
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.config
    }

    pub fn generate_answer(
        &self,
        ctx: &CallContext,
        question: &str,
        image: Option<&ImageRef>,
        context: &AssembledContext,
    ) -> Result<AnswerParts, GatewayError> {
        let request = ctx
            .request(templates::POST_ANSWER)
            .slot("question", question)
            .slot("evidence", context.text.clone())
            .slot("icl_examples", POST_ANSWER_EXAMPLES.trim())
            .image(image.cloned());
        let response = self.gateway.generate_within(&request, ctx.deadline)?;
        let (reason, answer) = parse_answer(&response.text);
        Ok(AnswerParts {
            reason,
            answer,
            stats: TokenStats::from_probs(&response.token_probs),
        })
    }

    pub fn white_box_verify(&self, stats: Option<&TokenStats>) -> bool {
        stats.is_some_and(|s| white_box_verify(s, &self.config))
    }

    /// Rubric-based model verdict. Errors count as incorrect.
    pub fn model_verify(
        &self,
        ctx: &CallContext,
        question: &str,
        image: Option<&ImageRef>,
        context: &AssembledContext,
        parts: &AnswerParts,
    ) -> Verdict {
        let request = ctx
            .request(templates::VERIFIER)
            .slot("question", question)
            .slot("evidence", context.text.clone())
            .slot("answer", parts.render())
            .image(image.cloned());
        match self.gateway.generate_within(&request, ctx.deadline) {
            Ok(r) => parse_verdict(&r.text),
            Err(e) => {
                log::warn!("verifier call failed: {e}");
                Verdict::Incorrect
            }
        }
    }

    /// Run both verifiers and combine them.
    pub fn verify(
        &self,
        ctx: &CallContext,
        question: &str,
        image: Option<&ImageRef>,
        context: &AssembledContext,
        parts: AnswerParts,
    ) -> VerifiedAnswer {
        if parts.answer == FALLBACK_ANSWER {
            return VerifiedAnswer::fallback(parts);
        }
        let (white, verdict) = rayon::join(
            || self.white_box_verify(parts.stats.as_ref()),
            || self.model_verify(ctx, question, image, context, &parts),
        );
        finalize(parts, white, verdict)
    }
}

#[cfg(test)]
mod tests;
