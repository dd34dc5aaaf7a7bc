use std::collections::HashSet;

use crate::textproc::{content_tokens, normalize, tokens};
use crate::FALLBACK_ANSWER;

pub fn is_fallback(answer: &str) -> bool {
    normalize(answer) == normalize(FALLBACK_ANSWER)
}

/// 1 when the normalized truth is a substring of the normalized answer.
/// Fallback answers score 0.
pub fn score_accuracy(answer: &str, truth: &str) -> f64 {
    let truth = normalize(truth);
    if truth.is_empty() || is_fallback(answer) {
        return 0.0;
    }
    let answer = normalize(answer);
    let hit = answer.contains(&truth);
    f64::from(u8::from(hit))
}

/// Recall of the truth's content tokens in the answer.
///
/// A truth made only of stopwords is compared on all of its tokens.
pub fn score_overlap(answer: &str, truth: &str) -> f64 {
    let mut truth_tokens: HashSet<String> = content_tokens(truth).into_iter().collect();
    let mut answer_tokens: HashSet<String> = content_tokens(answer).into_iter().collect();
    if truth_tokens.is_empty() {
        truth_tokens = tokens(truth).into_iter().collect();
        answer_tokens = tokens(answer).into_iter().collect();
    }
    if truth_tokens.is_empty() {
        return 0.0;
    }
    truth_tokens.intersection(&answer_tokens).count() as f64 / truth_tokens.len() as f64
}

/// Accuracy oracle. The rule-based judge is the only one shipped; a model
/// judge can be slotted in behind this trait.
pub trait Judge: Send + Sync {
    fn accuracy(&self, answer: &str, truth: &str) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleJudge;

impl Judge for RuleJudge {
    fn accuracy(&self, answer: &str, truth: &str) -> f64 {
        score_accuracy(answer, truth)
    }
}
