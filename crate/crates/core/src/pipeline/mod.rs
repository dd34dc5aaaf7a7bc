//! Per-turn orchestration across the three branches, with deadlines and
//! multi-turn session state.

mod build;
mod run;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use build::{Components, PipelineBuildError};

use crate::answer::{PostAnswer, VerifiedAnswer};
use crate::config::PipelineConfig;
use crate::image_agent::{ImageAgent, ImageEvidence};
use crate::preanswer::{DcotAgent, DomainClassifier, DomainLabel, ReasoningTrace};
use crate::rerank::{AssembledContext, Reranker};
use crate::routing::{Branch, RouteDecision, ToolDecision, ToolRouter};
use crate::text_agent::{SubQuery, TextAgent};
use crate::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DomainRouter,
    PreAnswer,
    SearchRouter,
    ToolRouter,
    VisualToolchain,
    TextToolchain,
    Rerank,
    Generate,
    Verify,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::DomainRouter => "domain_router",
            Stage::PreAnswer => "pre_answer",
            Stage::SearchRouter => "search_router",
            Stage::ToolRouter => "tool_router",
            Stage::VisualToolchain => "visual_toolchain",
            Stage::TextToolchain => "text_toolchain",
            Stage::Rerank => "rerank",
            Stage::Generate => "generate",
            Stage::Verify => "verify",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stages every branch runs before it diverges.
const PREFIX: [Stage; 3] = [Stage::DomainRouter, Stage::PreAnswer, Stage::SearchRouter];

/// Module chain of a branch. RAG runs each toolchain only when the tool
/// router asks for it.
pub fn expected_stages(branch: Branch, tools: Option<&ToolDecision>) -> Vec<Stage> {
    let mut stages = PREFIX.to_vec();
    match branch {
        Branch::DirectOutput => {}
        Branch::SearchVerify => stages.extend([Stage::TextToolchain, Stage::Rerank, Stage::Verify]),
        Branch::RagAugment => {
            stages.push(Stage::ToolRouter);
            if tools.is_some_and(|t| t.need_image_search) {
                stages.push(Stage::VisualToolchain);
            }
            if tools.is_some_and(|t| t.need_text_search) {
                stages.push(Stage::TextToolchain);
            }
            stages.extend([Stage::Rerank, Stage::Generate, Stage::Verify]);
        }
    }
    stages
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTurn {
    pub session_id: String,
    pub turn_index: usize,
    pub question: String,
    #[serde(default)]
    pub image_ref: Option<ImageRef>,
    /// Per-turn deadline; the configured default when absent.
    #[serde(
        default,
        with = "opt_millis",
        rename = "deadline_ms",
        skip_serializing_if = "Option::is_none"
    )]
    pub deadline: Option<Duration>,
    /// Key the scripted model responses for this turn are stored under;
    /// `<session_id>/<turn_index>` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_key: Option<String>,
}

impl QueryTurn {
    pub fn new(
        session_id: impl Into<String>,
        turn_index: usize,
        question: impl Into<String>,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            turn_index,
            question: question.into(),
            image_ref: None,
            deadline: None,
            fixture_key: None,
        }
    }

    pub fn with_image(mut self, image: impl Into<String>) -> Self {
        self.image_ref = Some(ImageRef::new(image));
        self
    }

    pub fn with_deadline(mut self, deadline: Duration) -> Self {
        self.deadline = Some(deadline);
        self
    }

    pub fn with_fixture_key(mut self, key: impl Into<String>) -> Self {
        self.fixture_key = Some(key.into());
        self
    }

    pub fn key(&self) -> String {
        self.fixture_key
            .clone()
            .unwrap_or_else(|| format!("{}/{}", self.session_id, self.turn_index))
    }
}

mod opt_millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_u64(d.as_millis() as u64),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<u64>::deserialize(d)?.map(Duration::from_millis))
    }
}

/// Dialogue state of one session. History only grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    history: Vec<(String, String)>,
    pub total_budget: Duration,
    elapsed: Duration,
    /// Most recent grounded object, for resolving references in later turns.
    pub focus_entity: Option<String>,
    next_turn: usize,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, total_budget: Duration) -> Self {
        Self {
            session_id: session_id.into(),
            history: Vec::new(),
            total_budget,
            elapsed: Duration::ZERO,
            focus_entity: None,
            next_turn: 0,
        }
    }

    pub fn history(&self) -> &[(String, String)] {
        &self.history
    }

    pub fn elapsed(&self) -> Duration {
        self.elapsed
    }

    pub fn remaining(&self) -> Duration {
        self.total_budget.saturating_sub(self.elapsed)
    }

    pub fn exhausted(&self) -> bool {
        self.remaining().is_zero()
    }

    /// History rendered for prompts.
    pub fn render_history(&self) -> String {
        self.history
            .iter()
            .map(|(q, a)| format!("User: {q}\nAssistant: {a}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Append a finished turn. Elapsed time saturates at the budget.
    pub fn record(&mut self, turn: &QueryTurn, outcome: &TurnOutcome) {
        self.history
            .push((turn.question.clone(), outcome.final_answer.clone()));
        self.elapsed = (self.elapsed + outcome.trace.elapsed).min(self.total_budget);
        if let Some(e) = outcome.trace.grounded_entity() {
            self.focus_entity = Some(e);
        }
        self.next_turn = turn.turn_index + 1;
    }

    pub fn next_turn(&self) -> usize {
        self.next_turn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    #[serde(with = "secs")]
    pub elapsed: Duration,
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?.max(0.0)))
    }
}

/// Everything one turn produced, stage by stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub session_id: String,
    pub turn_index: usize,
    pub question: String,
    pub domain: Option<DomainLabel>,
    pub reasoning: Option<ReasoningTrace>,
    pub route: Option<RouteDecision>,
    pub tools: Option<ToolDecision>,
    pub image: Option<ImageEvidence>,
    pub subqueries: Vec<SubQuery>,
    pub evidence: Option<AssembledContext>,
    pub answer: Option<VerifiedAnswer>,
    pub final_answer: String,
    pub fallback: bool,
    pub stage_timings: Vec<StageTiming>,
    /// Why the turn fell back early, if it did.
    pub error: Option<String>,
    #[serde(with = "secs")]
    pub elapsed: Duration,
}

impl PipelineTrace {
    pub fn new(turn: &QueryTurn) -> Self {
        Self {
            session_id: turn.session_id.clone(),
            turn_index: turn.turn_index,
            question: turn.question.clone(),
            domain: None,
            reasoning: None,
            route: None,
            tools: None,
            image: None,
            subqueries: Vec::new(),
            evidence: None,
            answer: None,
            final_answer: crate::FALLBACK_ANSWER.to_owned(),
            fallback: true,
            stage_timings: Vec::new(),
            error: None,
            elapsed: Duration::ZERO,
        }
    }

    pub fn stages(&self) -> Vec<Stage> {
        self.stage_timings.iter().map(|t| t.stage).collect()
    }

    pub fn branch(&self) -> Option<Branch> {
        self.route.as_ref().map(|r| r.branch)
    }

    /// Verified entity, or the specific object named by the pre-answer.
    pub fn grounded_entity(&self) -> Option<String> {
        self.image
            .as_ref()
            .and_then(|i| i.entity.as_ref().map(|e| e.entity_name.clone()))
            .or_else(|| {
                let r = self.reasoning.as_ref()?;
                r.flags
                    .is_named_object
                    .then(|| r.object_name.clone())
                    .flatten()
            })
    }

    /// Executed stages equal the branch chain, or a prefix of it when the
    /// turn stopped early.
    pub fn stages_consistent(&self) -> bool {
        let got = self.stages();
        match self.branch() {
            Some(b) => {
                let want = expected_stages(b, self.tools.as_ref());
                if self.error.is_some() {
                    want.starts_with(&got)
                } else {
                    got == want
                }
            }
            None => PREFIX.starts_with(&got) && (self.error.is_some() || got.is_empty()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub final_answer: String,
    pub trace: PipelineTrace,
}

/// The assembled pipeline. Shareable across threads; sessions are run
/// independently.
pub struct Pipeline {
    classifier: Arc<dyn DomainClassifier>,
    dcot: DcotAgent,
    tool_router: Arc<dyn ToolRouter>,
    image_agent: ImageAgent,
    text_agent: TextAgent,
    reranker: Reranker,
    post: PostAnswer,
    config: PipelineConfig,
}

impl Pipeline {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        classifier: Arc<dyn DomainClassifier>,
        dcot: DcotAgent,
        tool_router: Arc<dyn ToolRouter>,
        image_agent: ImageAgent,
        text_agent: TextAgent,
        reranker: Reranker,
        post: PostAnswer,
        config: PipelineConfig,
    ) -> Self {
        Self {
            classifier,
            dcot,
            tool_router,
            image_agent,
            text_agent,
            reranker,
            post,
            config,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn new_session(&self, session_id: impl Into<String>) -> SessionState {
        SessionState::new(session_id, self.config.session_budget())
    }

    /// Run turns of one session in order, threading history and enforcing
    /// the session budget.
    pub fn run_session(&self, turns: &[QueryTurn]) -> Vec<TurnOutcome> {
        let Some(first) = turns.first() else {
            return Vec::new();
        };
        let mut session = self.new_session(first.session_id.clone());
        turns
            .iter()
            .map(|t| {
                let outcome = self.answer_turn(t, &session);
                session.record(t, &outcome);
                outcome
            })
            .collect()
    }
}
