//! Command implementations behind the CLI.
//!
//! Each command reads its inputs, writes its artifacts under the output
//! directory, and drops a manifest next to them. Queries are processed
//! concurrently but all files are written by a single thread after a
//! deterministic sort, so repeated runs are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use ur3_core::analysis::{
    rank_shift, relevant_position_histogram, render_alpha_sweep_csv, render_calibration_csv,
    render_histogram_csv, render_shift_csv, render_timing_csv, timing_report, top1_calibration,
};
use ur3_core::corpus::{load_corpus, load_dataset, QueryExample};
use ur3_core::lm_backend::{CachedBackend, ScoreBackend, ScoreCache};
use ur3_core::metrics::{self, pool_judgments, relevance_bits, MetricsReport, QaReport, RankedLists};
use ur3_core::retrieval::{
    build_index, load_index, load_run_file, save_index, write_run_file, Bm25Params, Candidate,
    RunFile,
};
use ur3_core::scoring::{interpolate, rerank, Method, RerankResult, ScoringError};

use crate::config::{BackendChoice, MethodChoice, Retriever, RunConfig};
use crate::manifest::RunManifest;
use crate::sidecar::{self, SidecarRecord};

const QA_MAX_NEW_TOKENS: usize = 48;
const HIST_BINS: usize = 10;

fn ensure_out(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.out)
        .with_context(|| format!("creating output dir {}", config.out.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string())
}

fn build_backend(config: &RunConfig) -> Result<Box<dyn ScoreBackend>> {
    let raw = config.backend_config()?.build()?;
    match &config.cache_dir {
        Some(dir) => Ok(Box::new(CachedBackend::new(raw, ScoreCache::open(dir)?))),
        None => Ok(raw),
    }
}

pub fn cmd_index(config: &RunConfig) -> Result<PathBuf> {
    ensure_out(config)?;
    let corpus_path = config.corpus_path()?;
    let corpus = load_corpus(corpus_path)?;
    let index = build_index(&corpus, Bm25Params::default());
    let path = config.index_path();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    save_index(&path, &index)?;

    let mut manifest = RunManifest::begin("index", config.snapshot());
    manifest.record_input(corpus_path)?;
    manifest.record_output(&path)?;
    manifest.write(&config.out)?;
    println!("wrote {}", path.display());
    Ok(path)
}

pub fn cmd_retrieve(config: &RunConfig) -> Result<PathBuf> {
    ensure_out(config)?;
    let dataset_path = config.dataset_path()?;
    let examples = load_dataset(dataset_path)?;
    let path = config.out.join("retrieve.run");
    let mut manifest = RunManifest::begin("retrieve", config.snapshot());
    manifest.record_input(dataset_path)?;

    let (rankings, tag) = match &config.retriever {
        Retriever::Bm25 => {
            let index_path = config.index_path();
            let index = load_index(&index_path)
                .with_context(|| format!("loading {}; run `ur3 index` first", index_path.display()))?;
            manifest.record_input(&index_path)?;
            let rankings: BTreeMap<String, Vec<Candidate>> = examples
                .iter()
                .map(|ex| (ex.query_id.clone(), index.search(&ex.question, config.pool)))
                .collect();
            (rankings, "bm25".to_string())
        }
        Retriever::RunFile(source) => {
            let run = load_run_file(source)?;
            manifest.record_input(source)?;
            let rankings = run
                .rankings
                .into_iter()
                .map(|(qid, pool)| {
                    let mut top: Vec<Candidate> = pool.into_iter().take(config.pool).collect();
                    for (i, candidate) in top.iter_mut().enumerate() {
                        candidate.rank = i + 1;
                    }
                    (qid, top)
                })
                .collect();
            (rankings, run.tag)
        }
    };

    write_run_file(&path, &rankings, &tag)?;
    manifest.record_output(&path)?;
    manifest.write(&config.out)?;
    println!("wrote {}", path.display());
    Ok(path)
}

pub fn cmd_rerank(
    config: &RunConfig,
    run_path: &Path,
    allow_partial: bool,
) -> Result<(PathBuf, PathBuf)> {
    ensure_out(config)?;
    let corpus_path = config.corpus_path()?;
    let dataset_path = config.dataset_path()?;
    let corpus = load_corpus(corpus_path)?;
    let examples = load_dataset(dataset_path)?;
    let run = load_run_file(run_path)?;

    let method = match config.method {
        MethodChoice::None => bail!("method is `none`; nothing to rerank"),
        MethodChoice::Upr => Method::Upr,
        MethodChoice::Ur3 | MethodChoice::Interpolation => Method::Ur3,
    };

    let questions: BTreeMap<&str, &QueryExample> = examples
        .iter()
        .map(|ex| (ex.query_id.as_str(), ex))
        .collect();
    let missing: Vec<&String> = run
        .rankings
        .keys()
        .filter(|qid| !questions.contains_key(qid.as_str()))
        .collect();
    if !missing.is_empty() {
        bail!(
            "run file has queries absent from the dataset: {}",
            missing
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        );
    }

    let backend = build_backend(config)?;
    let queries: Vec<(&String, &Vec<Candidate>)> = run.rankings.iter().collect();
    let scored: Vec<(String, Result<(RerankResult, usize, f64), ScoringError>)> = queries
        .par_iter()
        .map(|(qid, pool)| {
            let slice = &pool[..pool.len().min(config.pool)];
            let example = questions[qid.as_str()];
            let start = Instant::now();
            let outcome = rerank(
                backend.as_ref(),
                &corpus,
                qid,
                &example.question,
                slice,
                method,
                config.alpha,
                config.max_context,
            )
            .and_then(|base| {
                if config.method == MethodChoice::Interpolation {
                    interpolate(slice, &base, config.lambda)
                } else {
                    Ok(base)
                }
            });
            let elapsed = start.elapsed().as_secs_f64();
            (qid.to_string(), outcome.map(|r| (r, slice.len(), elapsed)))
        })
        .collect();

    let mut rankings: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
    let mut records: Vec<SidecarRecord> = Vec::new();
    let mut samples: Vec<(usize, f64)> = Vec::new();
    let mut tag: Option<String> = None;
    for (qid, outcome) in scored {
        match outcome {
            Ok((result, pool_size, elapsed)) => {
                tag = Some(result.method.clone());
                rankings.insert(
                    qid.clone(),
                    result
                        .entries
                        .iter()
                        .map(|e| Candidate {
                            doc_id: e.doc_id.clone(),
                            rank: e.new_rank,
                            score: e.combined.unwrap_or(-e.score.risk),
                        })
                        .collect(),
                );
                records.extend(result.entries.iter().map(|e| SidecarRecord {
                    query_id: qid.clone(),
                    doc_id: e.doc_id.clone(),
                    old_rank: e.old_rank,
                    new_rank: e.new_rank,
                    alpha: e.score.alpha,
                    query_nll: e.score.query_nll,
                    doc_nll: e.score.doc_nll,
                    risk: e.score.risk,
                    query_tokens: e.score.query_tokens,
                    doc_tokens: e.score.doc_tokens,
                    truncated: e.score.truncated,
                }));
                samples.push((pool_size, elapsed));
            }
            Err(ScoringError::CandidateFailures {
                query_id,
                total,
                failures,
            }) => {
                let detail: Vec<String> = failures
                    .iter()
                    .map(|(doc, message)| format!("{doc}: {message}"))
                    .collect();
                if allow_partial {
                    log::warn!(
                        "skipping query {query_id}: {} of {total} candidates failed ({})",
                        failures.len(),
                        detail.join("; ")
                    );
                } else {
                    bail!(
                        "re-ranking query {query_id}: {} of {total} candidates failed: {}",
                        failures.len(),
                        detail.join("; ")
                    );
                }
            }
            Err(err) => return Err(err).with_context(|| format!("re-ranking query {qid}")),
        }
    }
    let Some(tag) = tag else {
        bail!("no queries survived re-ranking");
    };

    let run_out = config.out.join(format!("{tag}.run"));
    let sidecar_out = config.out.join(format!("{tag}.sidecar.jsonl"));
    write_run_file(&run_out, &rankings, &tag)?;
    sidecar::write_sidecar(&sidecar_out, &records)?;

    let mut manifest = RunManifest::begin("rerank", config.snapshot());
    manifest.record_input(corpus_path)?;
    manifest.record_input(dataset_path)?;
    manifest.record_input(run_path)?;
    if config.backend == BackendChoice::Ngram {
        if let Some(train) = &config.train {
            manifest.record_input(train)?;
        }
    }
    manifest.record_output(&run_out)?;
    manifest.record_output(&sidecar_out)?;
    if config.timing {
        let timing_out = config.out.join("timing.csv");
        fs::write(&timing_out, render_timing_csv(&timing_report(&samples)))?;
        manifest.record_output(&timing_out)?;
        println!("wrote {}", timing_out.display());
    }
    manifest.write(&config.out)?;
    println!("wrote {}", run_out.display());
    println!("wrote {}", sidecar_out.display());
    Ok((run_out, sidecar_out))
}

fn ranked_lists(run: &RunFile) -> RankedLists {
    run.rankings
        .iter()
        .map(|(qid, pool)| (qid.clone(), pool.iter().map(|c| c.doc_id.clone()).collect()))
        .collect()
}

pub fn cmd_eval(config: &RunConfig, runs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    ensure_out(config)?;
    let corpus_path = config.corpus_path()?;
    let dataset_path = config.dataset_path()?;
    let corpus = load_corpus(corpus_path)?;
    let examples = load_dataset(dataset_path)?;

    let mut manifest = RunManifest::begin("eval", config.snapshot());
    manifest.record_input(corpus_path)?;
    manifest.record_input(dataset_path)?;

    let mut reports: Vec<MetricsReport> = Vec::new();
    let mut written = Vec::new();
    for run_path in runs {
        let run = load_run_file(run_path)?;
        manifest.record_input(run_path)?;
        let lists = ranked_lists(&run);
        let report = metrics::evaluate(&run.tag, &corpus, &examples, &lists)
            .with_context(|| format!("evaluating {}", run_path.display()))?;
        let out = config.out.join(format!("eval.{}.json", stem(run_path)));
        fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
        manifest.record_output(&out)?;
        println!("wrote {}", out.display());
        reports.push(report);
        written.push(out);
    }

    let table_out = config.out.join("eval_table.txt");
    fs::write(&table_out, metrics::render_table(&reports))?;
    manifest.record_output(&table_out)?;
    manifest.write(&config.out)?;
    println!("wrote {}", table_out.display());
    written.push(table_out);
    Ok(written)
}

#[derive(Serialize)]
struct QaPrediction<'a> {
    query_id: &'a str,
    prediction: String,
    em: bool,
    f1: f64,
}

/// Builds the reader prompt from the top passages and the question.
fn qa_prompt(passages: &[&str], question: &str) -> String {
    let mut prompt = String::new();
    for passage in passages {
        prompt.push_str("Context: ");
        prompt.push_str(passage);
        prompt.push('\n');
    }
    prompt.push('\n');
    prompt.push_str("Question: ");
    prompt.push_str(question);
    prompt.push_str("\nAnswer:");
    prompt
}

pub fn cmd_qa(
    config: &RunConfig,
    run_path: &Path,
    top_n: usize,
    allow_partial: bool,
) -> Result<PathBuf> {
    if top_n == 0 || top_n > 5 {
        bail!("top_n must be between 1 and 5, got {top_n}");
    }
    ensure_out(config)?;
    let corpus_path = config.corpus_path()?;
    let dataset_path = config.dataset_path()?;
    let corpus = load_corpus(corpus_path)?;
    let examples = load_dataset(dataset_path)?;
    let run = load_run_file(run_path)?;
    let backend = build_backend(config)?;

    let outcomes: Vec<(String, Result<String>)> = examples
        .par_iter()
        .map(|example| {
            let mut passages: Vec<&str> = Vec::new();
            if let Some(pool) = run.rankings.get(&example.query_id) {
                for candidate in pool.iter().take(top_n) {
                    match corpus.get(&candidate.doc_id) {
                        Some(doc) => passages.push(doc.text.as_str()),
                        None => {
                            return (
                                example.query_id.clone(),
                                Err(anyhow::anyhow!(
                                    "document {} is not in the corpus",
                                    candidate.doc_id
                                )),
                            )
                        }
                    }
                }
            }
            let prompt = qa_prompt(&passages, &example.question);
            let generated = backend
                .generate(&prompt, QA_MAX_NEW_TOKENS)
                .map(|text| text.trim().to_string())
                .map_err(anyhow::Error::from);
            (example.query_id.clone(), generated)
        })
        .collect();

    let mut scores: Vec<(bool, f64)> = Vec::new();
    let mut lines: Vec<String> = Vec::new();
    for ((qid, outcome), example) in outcomes.into_iter().zip(&examples) {
        let prediction = match outcome {
            Ok(text) => text,
            Err(err) if allow_partial => {
                log::warn!("query {qid}: answer generation failed ({err:#}), scoring empty");
                String::new()
            }
            Err(err) => return Err(err).with_context(|| format!("answering query {qid}")),
        };
        let (em, f1) = metrics::em_f1(&prediction, &example.answers);
        lines.push(serde_json::to_string(&QaPrediction {
            query_id: &qid,
            prediction,
            em,
            f1,
        })?);
        scores.push((em, f1));
    }

    let report = QaReport::from_scores(&scores, top_n);
    let stem = stem(run_path);
    let report_out = config.out.join(format!("qa.{stem}.json"));
    let predictions_out = config.out.join(format!("qa.{stem}.jsonl"));
    fs::write(&report_out, serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(&predictions_out, lines.join("\n") + "\n")?;

    let mut manifest = RunManifest::begin("qa", config.snapshot());
    manifest.record_input(corpus_path)?;
    manifest.record_input(dataset_path)?;
    manifest.record_input(run_path)?;
    manifest.record_output(&report_out)?;
    manifest.record_output(&predictions_out)?;
    manifest.write(&config.out)?;
    println!("wrote {}", report_out.display());
    println!("wrote {}", predictions_out.display());
    Ok(report_out)
}

pub fn cmd_analyze(
    config: &RunConfig,
    before_path: &Path,
    after_path: &Path,
    sidecar_path: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    ensure_out(config)?;
    let corpus_path = config.corpus_path()?;
    let dataset_path = config.dataset_path()?;
    let corpus = load_corpus(corpus_path)?;
    let examples = load_dataset(dataset_path)?;
    let before = ranked_lists(&load_run_file(before_path)?);
    let after = ranked_lists(&load_run_file(after_path)?);
    let judgments = pool_judgments(&corpus, &examples, &after)?;

    let mut manifest = RunManifest::begin("analyze", config.snapshot());
    manifest.record_input(corpus_path)?;
    manifest.record_input(dataset_path)?;
    manifest.record_input(before_path)?;
    manifest.record_input(after_path)?;
    let mut written = Vec::new();

    let bits_of = |lists: &RankedLists| -> Result<Vec<Vec<bool>>> {
        lists
            .iter()
            .map(|(qid, ranking)| {
                let relevant = judgments
                    .get(qid)
                    .with_context(|| format!("query {qid} is absent from the dataset"))?;
                Ok(relevance_bits(ranking, relevant))
            })
            .collect()
    };
    for (name, lists) in [("hist_before.csv", &before), ("hist_after.csv", &after)] {
        let hist = relevant_position_histogram(&bits_of(lists)?, HIST_BINS)?;
        let path = config.out.join(name);
        fs::write(&path, render_histogram_csv(&hist))?;
        manifest.record_output(&path)?;
        println!("wrote {}", path.display());
        written.push(path);
    }

    let (shift_records, _summary) = rank_shift(&before, &after, &judgments)?;
    let shift_out = config.out.join("shift.csv");
    fs::write(&shift_out, render_shift_csv(&shift_records))?;
    manifest.record_output(&shift_out)?;
    println!("wrote {}", shift_out.display());
    written.push(shift_out);

    if let Some(sidecar_path) = sidecar_path {
        let records = sidecar::load_sidecar(sidecar_path)?;
        manifest.record_input(sidecar_path)?;
        let scores: BTreeMap<(String, String), (f64, f64)> = records
            .iter()
            .map(|r| {
                (
                    (r.query_id.clone(), r.doc_id.clone()),
                    (r.query_nll, r.doc_nll),
                )
            })
            .collect();
        let classes = top1_calibration(&before, &after, &judgments, &scores)?;
        let path = config.out.join("calibration.csv");
        fs::write(&path, render_calibration_csv(&classes))?;
        manifest.record_output(&path)?;
        println!("wrote {}", path.display());
        written.push(path);
    }

    manifest.write(&config.out)?;
    Ok(written)
}

pub fn cmd_sweep_alpha(
    config: &RunConfig,
    sidecar_path: &Path,
    alphas: &[f64],
) -> Result<PathBuf> {
    ensure_out(config)?;
    let corpus_path = config.corpus_path()?;
    let dataset_path = config.dataset_path()?;
    let corpus = load_corpus(corpus_path)?;
    let examples = load_dataset(dataset_path)?;
    let records = sidecar::load_sidecar(sidecar_path)?;
    let rows = ur3_core::analysis::alpha_sweep(
        &corpus,
        &examples,
        &sidecar::candidate_records(&records),
        alphas,
    )?;

    let path = config.out.join("alpha_sweep.csv");
    fs::write(&path, render_alpha_sweep_csv(&rows))?;
    let mut manifest = RunManifest::begin("sweep-alpha", config.snapshot());
    manifest.record_input(corpus_path)?;
    manifest.record_input(dataset_path)?;
    manifest.record_input(sidecar_path)?;
    manifest.record_output(&path)?;
    manifest.write(&config.out)?;
    println!("wrote {}", path.display());
    Ok(path)
}
