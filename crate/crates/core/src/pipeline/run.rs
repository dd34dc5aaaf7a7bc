use std::time::Instant;

use super::{Pipeline, PipelineTrace, QueryTurn, SessionState, Stage, StageTiming, TurnOutcome};
use crate::answer::{AnswerParts, VerifiedAnswer};
use crate::deadline::Deadline;
use crate::gateway::CallContext;
use crate::image_agent::ImageEvidence;
use crate::preanswer::{PreAnswerError, ReasoningTrace};
use crate::rerank::AssembledContext;
use crate::routing::{route_search, Branch};
use crate::search::{HitPayload, SearchHit, Source};
use crate::text_agent::{fuse_object_label, SubQuery, SubQueryOrigin};
use crate::{ImageRef, FALLBACK_ANSWER};

/// Reason a turn stopped before its branch chain completed.
enum Abort {
    Deadline(Stage),
    Failed(Stage, String),
}

struct TurnRun {
    trace: PipelineTrace,
    deadline: Deadline,
}

impl TurnRun {
    /// Run one stage and record its timing. A deadline reached before or
    /// during the stage aborts the turn.
    fn stage<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> Result<T, Abort> {
        if self.deadline.expired() {
            return Err(Abort::Deadline(stage));
        }
        let t0 = Instant::now();
        let out = f();
        self.trace.stage_timings.push(StageTiming {
            stage,
            elapsed: t0.elapsed(),
        });
        if self.deadline.expired() {
            return Err(Abort::Deadline(stage));
        }
        Ok(out)
    }
}

/// Draft of a Search Verify turn, in the shape the verifiers take.
fn draft_parts(trace: &ReasoningTrace) -> AnswerParts {
    AnswerParts {
        reason: trace.steps.join(" "),
        answer: trace.draft_answer.clone(),
        stats: trace.stats,
    }
}

fn named_object(trace: &ReasoningTrace) -> Option<String> {
    trace
        .flags
        .is_named_object
        .then(|| trace.object_name.clone())
        .flatten()
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn push_unique(subqueries: &mut Vec<SubQuery>, q: SubQuery) {
    if !subqueries.iter().any(|s| s.text == q.text) {
        subqueries.push(q);
    }
}

impl Pipeline {
    /// Answer one turn. Never fails: any deadline breach or exhausted
    /// budget yields the fallback answer with the reason in the trace.
    pub fn answer_turn(&self, turn: &QueryTurn, session: &SessionState) -> TurnOutcome {
        let started = Instant::now();
        let mut run = TurnRun {
            trace: PipelineTrace::new(turn),
            deadline: Deadline::never(),
        };
        if session.exhausted() {
            run.trace.error = Some("session budget exhausted".into());
        } else {
            let budget = turn
                .deadline
                .unwrap_or_else(|| self.config.turn_deadline())
                .min(session.remaining());
            run.deadline = Deadline::after(budget);
            let ctx = CallContext::new(turn.key())
                .with_deadline(run.deadline)
                .with_history(session.render_history());
            if let Err(abort) = self.execute(&mut run, turn, session, &ctx) {
                run.trace.error = Some(match abort {
                    Abort::Deadline(stage) => format!("deadline exceeded during {stage}"),
                    Abort::Failed(stage, why) => format!("{stage} failed: {why}"),
                });
                run.trace.final_answer = FALLBACK_ANSWER.to_owned();
                run.trace.fallback = true;
            }
        }
        let mut trace = run.trace;
        trace.elapsed = started.elapsed();
        TurnOutcome {
            final_answer: trace.final_answer.clone(),
            trace,
        }
    }

    fn execute(
        &self,
        run: &mut TurnRun,
        turn: &QueryTurn,
        session: &SessionState,
        ctx: &CallContext,
    ) -> Result<(), Abort> {
        let q = turn.question.as_str();
        let image = turn.image_ref.as_ref();

        let domain = run.stage(Stage::DomainRouter, || {
            self.classifier.classify(ctx, q, image)
        })?;
        run.trace.domain = Some(domain.clone());

        let reasoning = run.stage(Stage::PreAnswer, || {
            self.dcot.preanswer(ctx, q, image, &domain)
        })?;
        let reasoning = match reasoning {
            Ok(r) => r,
            Err(PreAnswerError::Timeout) => return Err(Abort::Deadline(Stage::PreAnswer)),
            Err(e @ PreAnswerError::InvalidTaxonomy(_)) => {
                return Err(Abort::Failed(Stage::PreAnswer, e.to_string()))
            }
        };
        run.trace.reasoning = Some(reasoning.clone());

        let route = run.stage(Stage::SearchRouter, || route_search(&reasoning))?;
        let branch = route.branch;
        run.trace.route = Some(route);

        match branch {
            Branch::DirectOutput => {
                run.trace.final_answer = reasoning.draft_answer.clone();
                run.trace.fallback = false;
                Ok(())
            }
            Branch::SearchVerify => self.search_verify(run, q, image, session, &reasoning, ctx),
            Branch::RagAugment => self.rag_augment(run, q, image, session, &reasoning, ctx),
        }
    }

    fn text_toolchain(
        &self,
        ctx: &CallContext,
        q: &str,
        reasoning: &ReasoningTrace,
        visual_context: Option<&str>,
        entity: Option<&str>,
    ) -> (Vec<SubQuery>, Vec<SearchHit>) {
        if !self.config.enable_text_toolchain {
            return (Vec::new(), Vec::new());
        }
        let mut subqueries = self
            .text_agent
            .rephrase_and_split(ctx, q, reasoning, visual_context);
        if let Some(e) = entity {
            push_unique(
                &mut subqueries,
                SubQuery {
                    text: fuse_object_label(q, e),
                    origin: SubQueryOrigin::Fusion,
                    parent_step: None,
                },
            );
        }
        let hits = self.text_agent.search(&subqueries).unwrap_or_else(|e| {
            log::warn!("text search unavailable: {e}");
            Vec::new()
        });
        (subqueries, hits)
    }

    fn rerank(&self, q: &str, image: Option<&ImageRef>, hits: &[SearchHit]) -> AssembledContext {
        self.reranker.rerank(q, image, hits).unwrap_or_else(|e| {
            log::warn!("reranker failed, continuing without evidence: {e}");
            AssembledContext::default()
        })
    }

    fn finish(run: &mut TurnRun, verified: VerifiedAnswer) {
        run.trace.final_answer = verified.final_answer.clone();
        run.trace.fallback = verified.fallback;
        run.trace.answer = Some(verified);
    }

    fn search_verify(
        &self,
        run: &mut TurnRun,
        q: &str,
        image: Option<&ImageRef>,
        session: &SessionState,
        reasoning: &ReasoningTrace,
        ctx: &CallContext,
    ) -> Result<(), Abort> {
        let entity = named_object(reasoning).or_else(|| session.focus_entity.clone());
        let (subqueries, hits) = run.stage(Stage::TextToolchain, || {
            self.text_toolchain(ctx, q, reasoning, entity.as_deref(), entity.as_deref())
        })?;
        run.trace.subqueries = subqueries;
        let evidence = run.stage(Stage::Rerank, || self.rerank(q, image, &hits))?;
        run.trace.evidence = Some(evidence.clone());
        let verified = run.stage(Stage::Verify, || {
            self.post
                .verify(ctx, q, image, &evidence, draft_parts(reasoning))
        })?;
        Self::finish(run, verified);
        Ok(())
    }

    fn rag_augment(
        &self,
        run: &mut TurnRun,
        q: &str,
        image: Option<&ImageRef>,
        session: &SessionState,
        reasoning: &ReasoningTrace,
        ctx: &CallContext,
    ) -> Result<(), Abort> {
        let tools = run.stage(Stage::ToolRouter, || {
            let mut d = self.tool_router.route(ctx, q, reasoning, image);
            // A later turn whose reasoning names no object is about the
            // dialogue, not the picture.
            let follow_up = !session.history().is_empty() && reasoning.object_name.is_none();
            let image_skip = if !d.need_image_search {
                None
            } else if follow_up {
                Some("the turn refers back to the dialogue rather than to a visual object")
            } else if image.is_none() {
                Some("the turn has no image")
            } else if !self.config.enable_visual_toolchain {
                Some("the visual toolchain is disabled")
            } else {
                None
            };
            let text_skip = d.need_text_search && !self.config.enable_text_toolchain;
            if image_skip.is_some() || text_skip {
                d.need_image_search &= image_skip.is_none();
                d.need_text_search &= !text_skip;
                let image_part = match image_skip {
                    Some(why) => format!("image search is skipped because {why}"),
                    None if d.need_image_search => "image search is needed".to_owned(),
                    None => "image search is not needed".to_owned(),
                };
                let text_part = match (text_skip, d.need_text_search) {
                    (true, _) => "text search is skipped because the text toolchain is disabled",
                    (false, true) => "text search is needed for facts not visible in the image",
                    (false, false) => "text search is not needed",
                };
                d.rationale = capitalize(&format!("{image_part}, and {text_part}."));
            }
            d
        })?;
        run.trace.tools = Some(tools.clone());

        let mut visual: Option<ImageEvidence> = None;
        if tools.need_image_search {
            let img = image.expect("image search requires an image");
            visual = run
                .stage(Stage::VisualToolchain, || self.image_agent.run(ctx, q, img))?
                .map_err(|e| log::warn!("visual toolchain failed: {e}"))
                .ok();
            run.trace.image = visual.clone();
        }

        let verified_entity = visual.as_ref().and_then(|v| v.entity.clone());
        let mut hits: Vec<SearchHit> = Vec::new();
        if tools.need_text_search {
            let context = visual
                .as_ref()
                .and_then(ImageEvidence::visual_context)
                .or_else(|| named_object(reasoning))
                .or_else(|| session.focus_entity.clone());
            let entity = verified_entity
                .as_ref()
                .map(|e| e.entity_name.clone())
                .or_else(|| named_object(reasoning))
                .or_else(|| session.focus_entity.clone());
            let (subqueries, text_hits) = run.stage(Stage::TextToolchain, || {
                self.text_toolchain(ctx, q, reasoning, context.as_deref(), entity.as_deref())
            })?;
            run.trace.subqueries = subqueries;
            hits = text_hits;
        }
        // Only the verified entity's metadata enters the evidence pool.
        if let Some(e) = &verified_entity {
            hits.push(SearchHit {
                source: Source::ImageKg,
                score: e.match_score,
                payload: HitPayload::Kg(e.kg_entry.clone()),
            });
        }

        let evidence = run.stage(Stage::Rerank, || self.rerank(q, image, &hits))?;
        run.trace.evidence = Some(evidence.clone());

        let parts = run.stage(Stage::Generate, || {
            self.post.generate_answer(ctx, q, image, &evidence)
        })?;
        let parts = match parts {
            Ok(p) => p,
            Err(e) if e.is_timeout() => return Err(Abort::Deadline(Stage::Generate)),
            Err(e) => {
                log::warn!("answer generation failed: {e}");
                AnswerParts {
                    reason: String::new(),
                    answer: FALLBACK_ANSWER.to_owned(),
                    stats: None,
                }
            }
        };
        let verified = run.stage(Stage::Verify, || {
            self.post.verify(ctx, q, image, &evidence, parts)
        })?;
        Self::finish(run, verified);
        Ok(())
    }
}
