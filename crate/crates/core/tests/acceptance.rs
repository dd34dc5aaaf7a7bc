//! Acceptance harness. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use common::*;
use dynrag_core::answer::{
    finalize, white_box_score, white_box_verify, AnswerParts, TokenStats, Verdict, VerifierConfig,
};
use dynrag_core::eval::{score_accuracy, score_overlap, EvalReport, TAXONOMY_AXES};
use dynrag_core::rerank::{
    assemble_context, Chunk, FineScorer, MultiVectorEncoder, RerankConfig, RerankError, Reranker,
};
use dynrag_core::routing::Branch;
use dynrag_core::search::{
    HardNegativeConfig, HashedBagEncoder, KgEntry, KgIndex, Source, TextEncoder, WebDoc, WebIndex,
};
use dynrag_core::{ImageRef, QueryTurn, FALLBACK_ANSWER};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Fixture report shared by the routing, golden and metrics criteria.
fn fixture_report() -> &'static (EvalReport, Duration) {
    static REPORT: OnceLock<(EvalReport, Duration)> = OnceLock::new();
    REPORT.get_or_init(|| {
        let t0 = Instant::now();
        let report = run_fixture_report(4);
        (report, t0.elapsed())
    })
}

/// Scripted encoder: every query yields the same vectors, chunks map to the
/// vector stored under their text.
struct TableEncoder {
    queries: Vec<Vec<f64>>,
    chunks: HashMap<String, Vec<f64>>,
}

impl MultiVectorEncoder for TableEncoder {
    fn encode_query(
        &self,
        _q: &str,
        _image: Option<&ImageRef>,
        n: usize,
    ) -> Result<Vec<Vec<f64>>, RerankError> {
        Ok(self.queries.iter().take(n).cloned().collect())
    }

    fn encode_chunk(&self, text: &str) -> Result<Vec<f64>, RerankError> {
        self.chunks
            .get(text)
            .cloned()
            .ok_or_else(|| RerankError::EncoderUnavailable(format!("no vector for {text}")))
    }
}

struct TableScorer(HashMap<String, f64>);

impl FineScorer for TableScorer {
    fn score(&self, _q: &str, chunk: &str, _instruction: &str) -> Result<f64, RerankError> {
        Ok(self.0[chunk])
    }
}

const TRIPLES: [(i64, i64, i64); 12] = [
    (0, 1, 1),
    (1, 0, 1),
    (3, 4, 5),
    (4, 3, 5),
    (5, 12, 13),
    (12, 5, 13),
    (8, 15, 17),
    (15, 8, 17),
    (7, 24, 25),
    (24, 7, 25),
    (20, 21, 29),
    (21, 20, 29),
];

struct OracleChunk {
    id: String,
    source_rank: u8,
    position: usize,
    coarse: f64,
    fine: f64,
}

/// `a` sorts strictly ahead of `b` under the evidence order.
fn ahead(sa: f64, a: &OracleChunk, sb: f64, b: &OracleChunk) -> bool {
    if sa != sb {
        return sa > sb;
    }
    if a.source_rank != b.source_rank {
        return a.source_rank < b.source_rank;
    }
    if a.position != b.position {
        return a.position < b.position;
    }
    a.id < b.id
}

/// Exhaustive cascade: a chunk survives a stage when it passes the
/// threshold and fewer than `k` passing chunks rank ahead of it.
fn cascade_oracle(
    chunks: &[OracleChunk],
    tau_c: f64,
    tau_f: f64,
    k1: usize,
    k2: usize,
) -> Vec<String> {
    let passing: Vec<usize> = (0..chunks.len())
        .filter(|&i| chunks[i].coarse >= tau_c)
        .collect();
    let coarse_kept: Vec<usize> = passing
        .iter()
        .copied()
        .filter(|&i| {
            let better = passing
                .iter()
                .filter(|&&j| ahead(chunks[j].coarse, &chunks[j], chunks[i].coarse, &chunks[i]))
                .count();
            better < k1
        })
        .collect();
    let cum = |i: usize| chunks[i].coarse.clamp(0.0, 1.0) * chunks[i].fine;
    let bar = tau_f * tau_c;
    let fine_pass: Vec<usize> = coarse_kept
        .iter()
        .copied()
        .filter(|&i| cum(i) > bar)
        .collect();
    let rank_in = |set: &[usize], i: usize| {
        set.iter()
            .filter(|&&j| ahead(cum(j), &chunks[j], cum(i), &chunks[i]))
            .count()
    };
    let fine_kept: Vec<usize> = fine_pass
        .iter()
        .copied()
        .filter(|&i| rank_in(&fine_pass, i) < k2)
        .collect();
    let mut out = vec![String::new(); fine_kept.len()];
    for &i in &fine_kept {
        out[rank_in(&fine_kept, i)] = chunks[i].id.clone();
    }
    out
}

fn criterion_reranker_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let t0 = Instant::now();
    let mut total_selected = 0usize;
    for corpus in 0..200 {
        let n = rng.random_range(0..=100);
        let mut chunks = Vec::with_capacity(n);
        let mut oracle = Vec::with_capacity(n);
        let mut vectors = HashMap::new();
        let mut fines = HashMap::new();
        for i in 0..n {
            let (a, b, c) = *TRIPLES.choose(&mut rng).unwrap();
            let (x, y) = (
                if rng.random_bool(0.3) { -a } else { a },
                if rng.random_bool(0.3) { -b } else { b },
            );
            let fine = f64::from(rng.random_range(0..=20u8)) / 20.0;
            let source = if rng.random_bool(0.25) {
                Source::ImageKg
            } else {
                Source::Web
            };
            let position = rng.random_range(0..4);
            let text = format!("chunk text {i}");
            let id = format!("doc{}#{position}-{i:03}", rng.random_range(0..6));
            vectors.insert(text.clone(), vec![x as f64, y as f64]);
            fines.insert(text.clone(), fine);
            chunks.push(Chunk {
                text,
                source,
                doc_url: format!("https://doc.example/{}", i % 7),
                position,
                chunk_id: id.clone(),
            });
            oracle.push(OracleChunk {
                id,
                source_rank: u8::from(source == Source::ImageKg),
                position,
                coarse: (x as f64 / c as f64).max(y as f64 / c as f64),
                fine,
            });
        }
        let k1 = rng.random_range(1..=120);
        let k2 = rng.random_range(1..=k1);
        let tau_c = f64::from(rng.random_range(0..=10u8)) / 10.0;
        let tau_f = f64::from(rng.random_range(0..=10u8)) / 10.0;
        let config = RerankConfig {
            k1,
            k2,
            tau_coarse: tau_c,
            tau_fine: tau_f,
            n_query_tokens: 2,
            ..RerankConfig::default()
        };
        let encoder = TableEncoder {
            queries: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            chunks: vectors,
        };
        let reranker = Reranker::new(Arc::new(encoder), Arc::new(TableScorer(fines)), config)
            .map_err(|e| e.to_string())?;
        let coarse = reranker
            .coarse_score("q", None, chunks)
            .map_err(|e| e.to_string())?;
        let got: Vec<String> = assemble_context(reranker.fine_score("q", coarse))
            .chunks
            .into_iter()
            .map(|(c, _)| c.chunk_id)
            .collect();
        let want = cascade_oracle(&oracle, tau_c, tau_f, k1, k2);
        ensure(got == want, || {
            format!("corpus {corpus} (n={n}, k1={k1}, k2={k2}, tau_c={tau_c}, tau_f={tau_f}): got {got:?}, oracle {want:?}")
        })?;
        total_selected += want.len();
    }
    let elapsed = t0.elapsed();
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "200 corpora, {total_selected} selected chunks, {elapsed:.2?}"
    ))
}

fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

fn criterion_coarse_max_sim() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let dim = 12;
    let mut compared = 0usize;
    let mut worst: f64 = 0.0;
    for n_q in 1..=16 {
        for _ in 0..10 {
            let queries: Vec<Vec<f64>> = (0..n_q)
                .map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let n = rng.random_range(1..=40);
            let mut table = HashMap::new();
            let mut chunks = Vec::new();
            for i in 0..n {
                let text = format!("c{i}");
                table.insert(
                    text.clone(),
                    (0..dim)
                        .map(|_| rng.random_range(0.0..1.0))
                        .collect::<Vec<f64>>(),
                );
                chunks.push(Chunk {
                    text: text.clone(),
                    source: Source::Web,
                    doc_url: "https://doc.example".into(),
                    position: i,
                    chunk_id: text,
                });
            }
            let config = RerankConfig {
                k1: 1000,
                k2: 1,
                tau_coarse: 0.0,
                n_query_tokens: n_q,
                ..RerankConfig::default()
            };
            let encoder = TableEncoder {
                queries: queries.clone(),
                chunks: table.clone(),
            };
            let reranker = Reranker::new(
                Arc::new(encoder),
                Arc::new(TableScorer(HashMap::new())),
                config,
            )
            .map_err(|e| e.to_string())?;
            let scored = reranker
                .coarse_score("q", None, chunks)
                .map_err(|e| e.to_string())?;
            ensure(scored.len() == n, || {
                format!("N_q={n_q}: {} of {n} chunks scored", scored.len())
            })?;
            for (chunk, score) in scored {
                let v = &table[&chunk.text];
                let mut best = f64::NEG_INFINITY;
                for q in &queries {
                    best = best.max(brute_cosine(q, v));
                }
                let diff = (best - score).abs();
                worst = worst.max(diff);
                ensure(diff <= 1e-9, || {
                    format!("N_q={n_q}, {}: {score} vs {best}", chunk.chunk_id)
                })?;
                compared += 1;
            }
        }
    }
    Ok(format!(
        "{compared} chunk scores over N_q 1..=16, max error {worst:.1e}"
    ))
}

fn criterion_routing() -> Check {
    let cases = routing_cases();
    ensure(cases.len() == 30, || {
        format!("{} routing cases", cases.len())
    })?;
    let got = route_cases(&cases);
    let mut correct = 0;
    for (c, b) in cases.iter().zip(&got) {
        ensure(*b == c.expected_branch, || {
            format!("{}: expected {}, got {b}", c.id, c.expected_branch)
        })?;
        correct += 1;
    }
    let (report, _) = fixture_report();
    let exemplars = [
        ("umbrella", Branch::DirectOutput),
        ("car-right", Branch::SearchVerify),
        ("cafe", Branch::RagAugment),
    ];
    for (session, want) in exemplars {
        let record = report
            .records
            .iter()
            .find(|r| r.session_id == session)
            .ok_or_else(|| format!("exemplar {session} missing from the dataset"))?;
        let branch = record.taxonomy.get("branch").map(String::as_str);
        ensure(branch == Some(want.as_str()), || {
            format!("exemplar {session}: expected {want}, got {branch:?}")
        })?;
    }
    Ok(format!(
        "3/3 exemplars through the pipeline, {correct}/30 fixture cases"
    ))
}

fn criterion_tool_router() -> Check {
    let (router, extractor) = default_tool_router();
    let cases = tool_cases();
    ensure(cases.len() == 20, || {
        format!("{} tool-router cases", cases.len())
    })?;
    let mut rules: BTreeMap<String, usize> = BTreeMap::new();
    for c in &cases {
        let d = decide_tool_case(&router, &extractor, c);
        let got = (d.need_image_search, d.need_text_search);
        let want = (c.expected_image_search, c.expected_text_search);
        ensure(got == want, || {
            format!("{} [{}]: expected {want:?}, got {got:?}", c.id, c.rule)
        })?;
        *rules.entry(c.rule.clone()).or_default() += 1;
    }
    ensure(rules.len() == 4, || format!("rules covered: {rules:?}"))?;
    Ok(format!("20/20 cases, per rule {rules:?}"))
}

fn criterion_verifier_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    let cfg = VerifierConfig::default();
    let mut combos: HashSet<(bool, bool)> = HashSet::new();
    for i in 0..1000 {
        let len = rng.random_range(1..=40);
        let probs: Vec<f64> = (0..len)
            .map(|_| {
                if rng.random_bool(0.1) {
                    1.0
                } else {
                    rng.random_range(f64::EPSILON..1.0)
                }
            })
            .collect();
        let stats = TokenStats::from_probs(&probs).ok_or("no stats")?;
        let mut min = probs[0];
        let mut sum = 0.0;
        for p in &probs {
            if *p < min {
                min = *p;
            }
            sum += *p;
        }
        let mean = sum / probs.len() as f64;
        ensure(stats.s_min == min, || {
            format!("sequence {i}: s_min {} vs {min}", stats.s_min)
        })?;
        ensure(stats.s_mean == mean, || {
            format!("sequence {i}: s_mean {} vs {mean}", stats.s_mean)
        })?;
        ensure(stats.count == probs.len(), || {
            format!("sequence {i}: count")
        })?;

        let linear = 0.5 * min + 0.5 * mean;
        ensure(white_box_score(&stats, &cfg) == linear, || {
            format!("sequence {i}: linear score")
        })?;
        let white_pass = linear >= 0.75;
        ensure(white_box_verify(&stats, &cfg) == white_pass, || {
            format!("sequence {i}: white-box gate")
        })?;

        let verdict = if rng.random_bool(0.5) {
            Verdict::Correct
        } else {
            Verdict::Incorrect
        };
        let parts = AnswerParts {
            reason: "r".into(),
            answer: format!("answer {i}"),
            stats: Some(stats),
        };
        let out = finalize(parts, white_pass, verdict);
        let accept = white_pass && verdict == Verdict::Correct;
        let want = if accept {
            format!("answer {i}")
        } else {
            FALLBACK_ANSWER.to_owned()
        };
        ensure(out.final_answer == want && out.fallback == !accept, || {
            format!(
                "sequence {i}: white={white_pass}, verdict={verdict:?}, got {:?}",
                out.final_answer
            )
        })?;
        combos.insert((white_pass, verdict == Verdict::Correct));
    }
    for white in [false, true] {
        for correct in [false, true] {
            let verdict = if correct {
                Verdict::Correct
            } else {
                Verdict::Incorrect
            };
            let parts = AnswerParts {
                reason: String::new(),
                answer: "x".into(),
                stats: None,
            };
            let out = finalize(parts, white, verdict);
            ensure((out.final_answer == "x") == (white && correct), || {
                format!("truth table ({white}, {correct})")
            })?;
            combos.insert((white, correct));
        }
    }
    ensure(combos.len() == 4, || {
        format!("combinations seen: {combos:?}")
    })?;
    Ok("1000 sequences exact, all 4 verifier combinations follow AND".into())
}

fn criterion_deadline() -> Check {
    let pipeline = fixture_pipeline();
    let budget = Duration::from_secs(10);
    let limit = Duration::from_millis(10_200);
    let outcomes: Vec<(String, Duration, Option<String>)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..100)
            .map(|i| {
                let pipeline = &pipeline;
                s.spawn(move || {
                    let turn = QueryTurn::new(
                        format!("slow-rep-{i}"),
                        0,
                        "What is going on at this market?",
                    )
                    .with_image("slow")
                    .with_fixture_key("slow/0")
                    .with_deadline(budget);
                    let session = pipeline.new_session(turn.session_id.clone());
                    let t0 = Instant::now();
                    let out = pipeline.answer_turn(&turn, &session);
                    (out.final_answer, t0.elapsed(), out.trace.error)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker"))
            .collect()
    });
    let mut slowest = Duration::ZERO;
    let mut ok = 0;
    for (i, (answer, elapsed, error)) in outcomes.iter().enumerate() {
        ensure(answer == FALLBACK_ANSWER, || {
            format!("repetition {i} answered {answer:?}")
        })?;
        ensure(*elapsed <= limit, || {
            format!("repetition {i} took {elapsed:?}")
        })?;
        ensure(*elapsed >= Duration::from_millis(9_900), || {
            format!("repetition {i} returned after {elapsed:?}, the slow stage was not exercised ({error:?})")
        })?;
        slowest = slowest.max(*elapsed);
        ok += 1;
    }
    Ok(format!("{ok}/100 fallbacks, slowest {slowest:.3?}"))
}

fn criterion_golden() -> Check {
    let (report, elapsed) = fixture_report();
    let got = golden_entries(report);
    let expected = load_golden();
    let diffs = golden_diff(&expected, &got);
    ensure(diffs.is_empty(), || diffs.join("; "))?;
    ensure(expected.len() >= 20, || {
        format!("{} golden records", expected.len())
    })?;
    let branches: HashSet<&str> = expected
        .iter()
        .filter_map(|g| g.branch.as_deref())
        .collect();
    ensure(branches.len() == 3, || {
        format!("branches covered: {branches:?}")
    })?;
    let three_turn = expected.iter().any(|g| g.turn_index == 2);
    ensure(three_turn, || "no 3-turn session".into())?;
    let multi_source = report.records.iter().any(|r| {
        r.stages.iter().any(|s| s == "visual_toolchain")
            && r.stages.iter().any(|s| s == "text_toolchain")
    });
    let single_source = report.records.iter().any(|r| {
        r.stages.iter().any(|s| s == "tool_router")
            && (r.stages.iter().any(|s| s == "visual_toolchain")
                != r.stages.iter().any(|s| s == "text_toolchain"))
    });
    ensure(multi_source && single_source, || {
        "single- and multi-source turns not both present".into()
    })?;
    ensure(*elapsed < Duration::from_secs(30), || {
        format!("suite took {elapsed:?}")
    })?;
    Ok(format!(
        "{} records identical, {elapsed:.2?}",
        expected.len()
    ))
}

/// Expected interleave of ranked positives and negatives: positive `i` sits
/// at slot `i + i / every`, negative `j` at `(j + 1) * (every + 1) - 1`, and
/// whichever stream outlasts the other keeps its relative order.
fn interleave_oracle(
    positives: &[usize],
    negatives: &[usize],
    every: usize,
    k: usize,
) -> Vec<usize> {
    let mut slotted: Vec<(usize, usize)> = positives
        .iter()
        .enumerate()
        .map(|(i, d)| (i + i / every, *d))
        .chain(
            negatives
                .iter()
                .enumerate()
                .map(|(j, d)| ((j + 1) * (every + 1) - 1, *d)),
        )
        .collect();
    slotted.sort();
    slotted.into_iter().take(k).map(|(_, d)| d).collect()
}

fn ranked(scores: &[(usize, f64)], urls: &[String]) -> Vec<usize> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| urls[a.0].cmp(&urls[b.0])));
    v.into_iter().map(|(i, _)| i).collect()
}

/// Compare a result list with the oracle list slot by slot. Exact ties may
/// swap places, so slots are matched on score and negative flag.
fn compare_lists(
    what: &str,
    got: &[(String, f64)],
    want: &[usize],
    urls: &[String],
    scores: &[f64],
    negative: &[bool],
) -> Result<(), String> {
    ensure(got.len() == want.len(), || {
        format!("{what}: {} results, oracle {}", got.len(), want.len())
    })?;
    let index: HashMap<&str, usize> = urls
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let mut seen = HashSet::new();
    for (slot, ((url, score), w)) in got.iter().zip(want).enumerate() {
        let g = *index
            .get(url.as_str())
            .ok_or_else(|| format!("{what}: unknown url {url}"))?;
        ensure(seen.insert(g), || format!("{what}: duplicate {url}"))?;
        ensure((score - scores[g]).abs() <= 1e-9, || {
            format!("{what}: {url} scored {score}, oracle {}", scores[g])
        })?;
        ensure((scores[g] - scores[*w]).abs() <= 1e-9, || {
            format!(
                "{what} slot {slot}: {url} ({}) vs oracle {} ({})",
                scores[g], urls[*w], scores[*w]
            )
        })?;
        ensure(negative[g] == negative[*w], || {
            format!("{what} slot {slot}: hard-negative flag differs")
        })?;
    }
    Ok(())
}

const VOCAB: [&str; 48] = [
    "bridge", "tower", "cafe", "coffee", "history", "engine", "car", "price", "museum", "statue",
    "bronze", "river", "harbor", "bakery", "bread", "pizza", "cheese", "sneaker", "running",
    "trail", "opera", "house", "garden", "flower", "painting", "artist", "gallery", "station",
    "train", "ticket", "market", "street", "mountain", "lake", "island", "festival", "music",
    "stadium", "football", "jersey", "library", "novel", "author", "castle", "king", "city",
    "founder", "menu",
];

fn phrase(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n)
        .map(|_| *VOCAB.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn criterion_search_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    let encoder: Arc<dyn TextEncoder> = Arc::new(HashedBagEncoder::default());
    let docs: Vec<WebDoc> = (0..1000)
        .map(|i| WebDoc {
            url: format!("https://web.example/{i:04}"),
            title: phrase(&mut rng, 1, 3),
            snippet: phrase(&mut rng, 3, 10),
            html: String::new(),
            timestamp: String::new(),
            is_hard_negative: rng.random_bool(0.15),
        })
        .collect();
    let urls: Vec<String> = docs.iter().map(|d| d.url.clone()).collect();
    let negative: Vec<bool> = docs.iter().map(|d| d.is_hard_negative).collect();
    let embeddings: Vec<Vec<f64>> = docs
        .iter()
        .map(|d| encoder.embed(&d.embedding_text()))
        .collect();

    let mut web_queries = 0;
    let mut capped = 0;
    for rate in [0.0, 0.25, 1.0 / 3.0, 0.5, 1.0] {
        let hn = HardNegativeConfig { rate };
        let index =
            WebIndex::from_docs(docs.clone(), encoder.clone(), hn).map_err(|e| e.to_string())?;
        let every = (rate > 0.0).then(|| ((1.0 / rate).round() as usize).max(1));
        for _ in 0..20 {
            let query = phrase(&mut rng, 1, 4);
            let k = *[1usize, 7, 49, 50, 51, 200, 1000].choose(&mut rng).unwrap();
            let q = encoder.embed(&query);
            let scored: Vec<(usize, f64)> = embeddings
                .iter()
                .enumerate()
                .map(|(i, e)| (i, brute_cosine(&q, e)))
                .collect();
            let scores: Vec<f64> = scored.iter().map(|(_, s)| *s).collect();
            let order = ranked(&scored, &urls);
            let k_eff = k.min(50);
            let want: Vec<usize> = match every {
                None => order.into_iter().take(k_eff).collect(),
                Some(every) => {
                    let (neg, pos): (Vec<usize>, Vec<usize>) =
                        order.into_iter().partition(|i| negative[*i]);
                    interleave_oracle(&pos, &neg, every, k_eff)
                }
            };
            let hits = index.search(&query, k).map_err(|e| e.to_string())?;
            let got: Vec<(String, f64)> =
                hits.iter().map(|h| (h.url().to_owned(), h.score)).collect();
            compare_lists(
                &format!("web rate={rate} k={k} {query:?}"),
                &got,
                &want,
                &urls,
                &scores,
                &negative,
            )?;
            web_queries += 1;
            capped += usize::from(k > 50);
        }
    }

    let dim = 8;
    let entries: Vec<KgEntry> = (0..1000)
        .map(|i| KgEntry {
            image_embedding: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            entity_name: format!("entity {i}"),
            attributes: Default::default(),
            url: format!("https://kg.example/{i:04}"),
        })
        .collect();
    let kg_urls: Vec<String> = entries.iter().map(|e| e.url.clone()).collect();
    let no_negatives = vec![false; entries.len()];
    let kg = KgIndex::from_entries(entries.clone()).map_err(|e| e.to_string())?;
    let mut kg_queries = 0;
    for round in 0..40 {
        let query: Vec<f64> = if round % 10 == 0 {
            entries[round].image_embedding.clone()
        } else {
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let k = *[0usize, 1, 10, 50, 999, 1000, 1500]
            .choose(&mut rng)
            .unwrap();
        let scored: Vec<(usize, f64)> = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, brute_cosine(&query, &e.image_embedding)))
            .collect();
        let scores: Vec<f64> = scored.iter().map(|(_, s)| *s).collect();
        let want: Vec<usize> = ranked(&scored, &kg_urls).into_iter().take(k).collect();
        let hits = kg.search(&query, k).map_err(|e| e.to_string())?;
        let got: Vec<(String, f64)> = hits.iter().map(|h| (h.url().to_owned(), h.score)).collect();
        compare_lists(
            &format!("kg k={k}"),
            &got,
            &want,
            &kg_urls,
            &scores,
            &no_negatives,
        )?;
        if round % 10 == 0 && k > 0 {
            ensure(
                got[0].0 == kg_urls[round] && (got[0].1 - 1.0).abs() <= 1e-9,
                || format!("kg self-query {round} ranked {:?} first", got[0]),
            )?;
        }
        kg_queries += 1;
    }
    Ok(format!(
        "{web_queries} web queries ({capped} above the cap) and {kg_queries} KG queries over 1000 items"
    ))
}

fn criterion_metrics() -> Check {
    let cases = metrics_cases();
    for c in &cases {
        let acc = score_accuracy(&c.answer, &c.truth);
        let ov = score_overlap(&c.answer, &c.truth);
        let want_ov = c.overlap_matched as f64 / c.overlap_truth_tokens as f64;
        ensure(acc == f64::from(c.accuracy), || {
            format!("accuracy({:?}, {:?}) = {acc}", c.answer, c.truth)
        })?;
        ensure(ov == want_ov, || {
            format!(
                "overlap({:?}, {:?}) = {ov}, want {want_ov}",
                c.answer, c.truth
            )
        })?;
    }
    ensure(
        score_overlap("a red car", "red sports car") == 2.0 / 3.0,
        || "2/3 case".into(),
    )?;

    let (report, _) = fixture_report();
    let json: serde_json::Value =
        serde_json::from_str(&report.to_json()).map_err(|e| e.to_string())?;
    let records = json["records"].as_array().ok_or("records missing")?;
    let average = |rs: &[&serde_json::Value]| {
        let (mut a, mut o, mut e) = (0.0, 0.0, 0.0);
        for r in rs {
            a += r["accuracy"].as_f64().unwrap();
            o += r["overlap"].as_f64().unwrap();
            e += r["elapsed_secs"].as_f64().unwrap();
        }
        let n = rs.len() as f64;
        (100.0 * a / n, 100.0 * o / n, e / n)
    };
    let all: Vec<&serde_json::Value> = records.iter().collect();
    let headline = (
        json["accuracy"].as_f64(),
        json["overlap"].as_f64(),
        json["elapse"].as_f64(),
    );
    let (a, o, e) = average(&all);
    ensure(headline == (Some(a), Some(o), Some(e)), || {
        format!("headline {headline:?} vs recomputed {:?}", (a, o, e))
    })?;
    let mut groups = 0;
    for axis in TAXONOMY_AXES {
        let mut by_value: BTreeMap<String, Vec<&serde_json::Value>> = BTreeMap::new();
        for r in records {
            let v = r["taxonomy"][axis].as_str().unwrap_or("unknown").to_owned();
            by_value.entry(v).or_default().push(r);
        }
        for (value, rs) in by_value {
            let g = &json["per_taxonomy"][axis][&value];
            let (a, o, e) = average(&rs);
            let stored = (
                g["accuracy"].as_f64(),
                g["overlap"].as_f64(),
                g["elapse"].as_f64(),
                g["n"].as_u64(),
            );
            ensure(
                stored == (Some(a), Some(o), Some(e), Some(rs.len() as u64)),
                || {
                    format!(
                        "{axis}={value}: stored {stored:?}, recomputed {:?}",
                        (a, o, e)
                    )
                },
            )?;
            groups += 1;
        }
    }
    Ok(format!(
        "{} metric fixtures exact, headline and {groups} groups recompute",
        cases.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            "reranker cascade equals exhaustive oracle",
            criterion_reranker_oracle,
        ),
        (
            "coarse score equals max-over-query-vectors cosine",
            criterion_coarse_max_sim,
        ),
        ("search routing exemplars and fixture", criterion_routing),
        ("tool-router decision rules", criterion_tool_router),
        (
            "verifier statistics and acceptance algebra",
            criterion_verifier_algebra,
        ),
        ("deadline fallback under a slow stage", criterion_deadline),
        ("end-to-end golden traces", criterion_golden),
        (
            "search index equals brute-force scan",
            criterion_search_exactness,
        ),
        ("metrics fixtures and report recompute", criterion_metrics),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
