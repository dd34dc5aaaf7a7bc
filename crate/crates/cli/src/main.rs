//! Command-line front end: build indexes, run an evaluation, or dump the
//! trace of a single turn.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dynrag_core::eval::{evaluate, load_dataset, RuleJudge};
use dynrag_core::pipeline::Components;
use dynrag_core::{Config, ImageRef, Pipeline, QueryTurn};

#[derive(Parser)]
#[command(
    name = "dynrag",
    version,
    about = "Query-aware dynamic RAG for visual question answering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Load the configured corpora and report what was indexed.
    Ingest {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Run a labelled dataset and report Accuracy, Overlap and Elapse.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset JSONL.
        #[arg(long)]
        dataset: PathBuf,
        /// Where to write the JSON report; the markdown table goes next to it.
        #[arg(long)]
        report_out: Option<PathBuf>,
        /// Worker threads; defaults to the configured value. 0 means one per core.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Run one turn and print its pipeline trace as JSON.
    ///
    /// Either pick a turn from a dataset (earlier turns of the same session
    /// run first to build history) or ask a single question.
    Trace {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, requires = "session")]
        dataset: Option<PathBuf>,
        /// Session to replay from the dataset.
        #[arg(long)]
        session: Option<String>,
        /// Turn index to print; the last turn of the session by default.
        #[arg(long)]
        turn: Option<usize>,
        /// Ad hoc question, instead of a dataset turn.
        #[arg(long, conflicts_with = "dataset")]
        question: Option<String>,
        #[arg(long, requires = "question")]
        image: Option<String>,
        /// Key of the scripted model replies for the ad hoc question.
        #[arg(long, requires = "question")]
        fixture_key: Option<String>,
    },
}

fn load(config: &ConfigArg) -> Result<Config> {
    Config::load(&config.config).with_context(|| format!("loading {}", config.config.display()))
}

fn ingest(config: &ConfigArg) -> Result<()> {
    let cfg = load(config)?;
    let c = Components::load(&cfg)?;
    let summary = serde_json::json!({
        "web_documents": c.index.web.as_ref().map(|w| w.len()),
        "kg_entries": c.index.kg.as_ref().map(|k| k.len()),
        "images": c.images.len(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn eval(
    config: &ConfigArg,
    dataset: &PathBuf,
    report_out: Option<&PathBuf>,
    parallelism: Option<usize>,
) -> Result<()> {
    let cfg = load(config)?;
    let records =
        load_dataset(dataset).with_context(|| format!("loading {}", dataset.display()))?;
    let pipeline = Pipeline::from_config(&cfg)?;
    let report = evaluate(
        &pipeline,
        &records,
        &RuleJudge,
        parallelism.unwrap_or(cfg.eval.parallelism),
    )?;
    if let Some(out) = report_out {
        report
            .write(out)
            .with_context(|| format!("writing {}", out.display()))?;
        log::info!("report written to {}", out.display());
    }
    print!("{}", report.to_markdown());
    Ok(())
}

fn trace(
    config: &ConfigArg,
    dataset: Option<&PathBuf>,
    session: Option<&str>,
    turn: Option<usize>,
    question: Option<&str>,
    image: Option<&str>,
    fixture_key: Option<&str>,
) -> Result<()> {
    let cfg = load(config)?;
    let pipeline = Pipeline::from_config(&cfg)?;
    let outcome = if let Some(q) = question {
        let mut t = QueryTurn::new("adhoc", 0, q);
        t.image_ref = image.map(ImageRef::new);
        t.fixture_key = fixture_key.map(str::to_owned);
        pipeline.answer_turn(&t, &pipeline.new_session("adhoc"))
    } else {
        let (Some(dataset), Some(session)) = (dataset, session) else {
            bail!("trace needs either --question or --dataset with --session");
        };
        let mut turns: Vec<QueryTurn> = load_dataset(dataset)?
            .into_iter()
            .map(|r| r.turn)
            .filter(|t| t.session_id == session)
            .collect();
        turns.sort_by_key(|t| t.turn_index);
        let last = turn.unwrap_or(turns.len().saturating_sub(1));
        if last >= turns.len() {
            bail!("session `{session}` has {} turns", turns.len());
        }
        turns.truncate(last + 1);
        pipeline
            .run_session(&turns)
            .pop()
            .expect("at least one turn")
    };
    println!("{}", serde_json::to_string_pretty(&outcome.trace)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest { config } => ingest(config),
        Command::Eval {
            config,
            dataset,
            report_out,
            parallelism,
        } => eval(config, dataset, report_out.as_ref(), *parallelism),
        Command::Trace {
            config,
            dataset,
            session,
            turn,
            question,
            image,
            fixture_key,
        } => trace(
            config,
            dataset.as_ref(),
            session.as_deref(),
            *turn,
            question.as_deref(),
            image.as_deref(),
            fixture_key.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
