//! Dataset loading, batch execution and Accuracy / Overlap / Elapse
//! reporting.

mod metrics;
mod report;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{is_fallback, score_accuracy, score_overlap, Judge, RuleJudge};
pub use report::{EvalReport, GroupMetrics, RecordResult, REPORT_SCHEMA_VERSION, TAXONOMY_AXES};

use crate::config::{Config, ConfigError};
use crate::pipeline::{Pipeline, PipelineBuildError, QueryTurn, TurnOutcome};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Build(#[from] PipelineBuildError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labelled turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub turn: QueryTurn,
    pub ground_truth: String,
    /// `dynamism`, `category`, `domain` and any extra axes.
    #[serde(default)]
    pub taxonomy: BTreeMap<String, String>,
}

pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<EvalRecord>, EvalError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.ground_truth.trim().is_empty() {
            return Err(EvalError::Parse {
                line: i + 1,
                message: "ground_truth must be non-empty".into(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>, EvalError> {
    let file = std::fs::File::open(path)?;
    parse_dataset(std::io::BufReader::new(file))
}

/// Group records into sessions, in order of first appearance, each sorted
/// by turn index. Turn indices must run contiguously from 0.
pub fn sessions(records: &[EvalRecord]) -> Result<Vec<Vec<&EvalRecord>>, EvalError> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        let id = r.turn.session_id.as_str();
        if !groups.contains_key(id) {
            order.push(id);
        }
        groups.entry(id).or_default().push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let mut turns = groups.remove(id).unwrap_or_default();
            turns.sort_by_key(|r| r.turn.turn_index);
            for (i, r) in turns.iter().enumerate() {
                if r.turn.turn_index != i {
                    return Err(EvalError::InvalidDataset(format!(
                        "session `{id}` turn indices must run 0..{} without gaps or repeats",
                        turns.len()
                    )));
                }
            }
            Ok(turns)
        })
        .collect()
}

/// Score one finished turn.
pub fn score_record(
    record: &EvalRecord,
    outcome: &TurnOutcome,
    judge: &dyn Judge,
    deadline: Duration,
) -> RecordResult {
    let trace = &outcome.trace;
    let mut taxonomy = record.taxonomy.clone();
    if let Some(b) = trace.branch() {
        taxonomy.insert("branch".into(), b.as_str().into());
    }
    RecordResult {
        session_id: record.turn.session_id.clone(),
        turn_index: record.turn.turn_index,
        question: record.turn.question.clone(),
        ground_truth: record.ground_truth.clone(),
        final_answer: outcome.final_answer.clone(),
        fallback: trace.fallback,
        accuracy: judge.accuracy(&outcome.final_answer, &record.ground_truth),
        overlap: score_overlap(&outcome.final_answer, &record.ground_truth),
        elapsed_secs: trace.elapsed.min(deadline).as_secs_f64(),
        stages: trace
            .stages()
            .iter()
            .map(|s| s.as_str().to_owned())
            .collect(),
        taxonomy,
        error: trace.error.clone(),
    }
}

/// Run every session on a pool of `parallelism` workers (0 = one per core)
/// and reduce to a report. Turns within a session run in order.
pub fn evaluate(
    pipeline: &Pipeline,
    records: &[EvalRecord],
    judge: &dyn Judge,
    parallelism: usize,
) -> Result<EvalReport, EvalError> {
    let sessions = sessions(records)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let default_deadline = pipeline.config().turn_deadline();
    let results: Vec<Vec<RecordResult>> = pool.install(|| {
        sessions
            .par_iter()
            .map(|turns| {
                let queries: Vec<QueryTurn> = turns.iter().map(|r| r.turn.clone()).collect();
                let outcomes = pipeline.run_session(&queries);
                turns
                    .iter()
                    .zip(&outcomes)
                    .map(|(r, o)| {
                        score_record(r, o, judge, r.turn.deadline.unwrap_or(default_deadline))
                    })
                    .collect()
            })
            .collect()
    });
    Ok(EvalReport::from_records(
        results.into_iter().flatten().collect(),
    ))
}

/// Load the config and dataset, build the pipeline, and evaluate with the
/// configured parallelism unless `parallelism` overrides it.
pub fn run_eval(
    dataset_path: impl AsRef<Path>,
    config_path: impl AsRef<Path>,
    parallelism: Option<usize>,
) -> Result<EvalReport, EvalError> {
    let config = Config::load(config_path)?;
    let records = load_dataset(dataset_path)?;
    let pipeline = Pipeline::from_config(&config)?;
    evaluate(
        &pipeline,
        &records,
        &RuleJudge,
        parallelism.unwrap_or(config.eval.parallelism),
    )
}
