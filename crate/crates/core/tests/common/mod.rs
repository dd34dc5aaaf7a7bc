//! Loaders shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use dynrag_core::eval::{evaluate, load_dataset, EvalReport, RuleJudge};
use dynrag_core::gateway::{
    templates, CallContext, FixtureEntry, FixtureStore, Gateway, MockBackend,
};
use dynrag_core::preanswer::{
    DcotAgent, DomainLabel, FlagExtractor, PreAnswerConfig, ReasoningTrace,
};
use dynrag_core::routing::{route_search, Branch, RoutingConfig, RuleToolRouter, ToolDecision};
use dynrag_core::{Config, ImageRef, Pipeline};
use serde::{Deserialize, Serialize};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(name: &str) -> Vec<T> {
    let path = fixtures_dir().join(name);
    let text =
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).unwrap_or_else(|e| panic!("{name}:{}: {e}", i + 1)))
        .collect()
}

#[derive(Debug, Deserialize)]
pub struct RoutingCase {
    pub id: String,
    pub question: String,
    pub reply: String,
    pub expected_branch: Branch,
}

pub fn routing_cases() -> Vec<RoutingCase> {
    read_jsonl("routing_cases.jsonl")
}

/// Branch chosen for each case when its scripted reply is fed through the
/// pre-answer agent and the search router.
pub fn route_cases(cases: &[RoutingCase]) -> Vec<Branch> {
    let store = FixtureStore::from_entries(cases.iter().map(|c| {
        FixtureEntry::new(
            templates::EVALUATOR,
            c.id.as_str(),
            c.reply.as_str(),
            vec![0.95, 0.9, 0.92],
        )
    }))
    .expect("routing fixtures");
    let gateway = Arc::new(Gateway::with_default_templates(Arc::new(MockBackend::new(
        store,
    ))));
    let agent = DcotAgent::new(gateway, Arc::new(PreAnswerConfig::default()));
    let image = ImageRef::new("scene");
    cases
        .iter()
        .map(|c| {
            let domain = DomainLabel {
                name: "other".into(),
                confidence: 1.0,
            };
            let trace = agent
                .preanswer(
                    &CallContext::new(c.id.as_str()),
                    &c.question,
                    Some(&image),
                    &domain,
                )
                .expect("pre-answer");
            route_search(&trace).branch
        })
        .collect()
}

#[derive(Debug, Deserialize)]
pub struct ToolCase {
    pub id: String,
    pub question: String,
    pub has_image: bool,
    pub object: String,
    pub domain: String,
    pub expected_image_search: bool,
    pub expected_text_search: bool,
    pub rule: String,
}

pub fn tool_cases() -> Vec<ToolCase> {
    read_jsonl("tool_router_cases.jsonl")
}

pub fn decide_tool_case(
    router: &RuleToolRouter,
    extractor: &FlagExtractor,
    c: &ToolCase,
) -> ToolDecision {
    let steps = vec![format!(
        "The exact name of the object that the query \"{}\" is about is {}.",
        c.question, c.object
    )];
    let trace = ReasoningTrace::from_parts(extractor, &c.question, &c.domain, steps, "");
    let image = c.has_image.then(|| ImageRef::new("scene"));
    router.decide(&c.question, &trace, image.as_ref())
}

pub fn default_tool_router() -> (RuleToolRouter, FlagExtractor) {
    (
        RuleToolRouter::new(RoutingConfig::default()),
        FlagExtractor::new(&PreAnswerConfig::default()),
    )
}

/// Recorded outcome of one dataset turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenEntry {
    pub session_id: String,
    pub turn_index: usize,
    pub question: String,
    pub branch: Option<String>,
    pub stages: Vec<String>,
    pub final_answer: String,
}

pub fn golden_path() -> PathBuf {
    fixtures_dir().join("golden.jsonl")
}

pub fn load_golden() -> Vec<GoldenEntry> {
    read_jsonl("golden.jsonl")
}

pub fn fixture_pipeline() -> Pipeline {
    let config = Config::load(fixtures_dir().join("config.toml")).expect("config");
    Pipeline::from_config(&config).expect("pipeline")
}

/// Evaluate the fixture dataset on the mock-backed pipeline.
pub fn run_fixture_report(parallelism: usize) -> EvalReport {
    let records = load_dataset(fixtures_dir().join("dataset.jsonl")).expect("dataset");
    evaluate(&fixture_pipeline(), &records, &RuleJudge, parallelism).expect("eval")
}

pub fn golden_entries(report: &EvalReport) -> Vec<GoldenEntry> {
    let mut out: Vec<GoldenEntry> = report
        .records
        .iter()
        .cloned()
        .map(|r| GoldenEntry {
            session_id: r.session_id,
            turn_index: r.turn_index,
            question: r.question,
            branch: r.taxonomy.get("branch").cloned(),
            stages: r.stages,
            final_answer: r.final_answer,
        })
        .collect();
    out.sort_by(|a, b| (&a.session_id, a.turn_index).cmp(&(&b.session_id, b.turn_index)));
    out
}

pub fn run_golden_dataset(parallelism: usize) -> Vec<GoldenEntry> {
    golden_entries(&run_fixture_report(parallelism))
}

#[derive(Debug, Deserialize)]
pub struct MetricsCase {
    pub answer: String,
    pub truth: String,
    pub accuracy: u8,
    pub overlap_matched: usize,
    pub overlap_truth_tokens: usize,
}

pub fn metrics_cases() -> Vec<MetricsCase> {
    read_jsonl("metrics_cases.jsonl")
}

pub fn write_golden(entries: &[GoldenEntry]) {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).expect("serialize"));
        text.push('\n');
    }
    std::fs::write(golden_path(), text).expect("write golden");
}

/// Differences between a fresh run and the recorded golden file.
pub fn golden_diff(expected: &[GoldenEntry], got: &[GoldenEntry]) -> Vec<String> {
    let mut diffs = Vec::new();
    if expected.len() != got.len() {
        diffs.push(format!(
            "expected {} records, got {}",
            expected.len(),
            got.len()
        ));
    }
    for (e, g) in expected.iter().zip(got) {
        if e != g {
            diffs.push(format!(
                "{}/{}: expected {e:?}, got {g:?}",
                e.session_id, e.turn_index
            ));
        }
    }
    diffs
}
