//! Ranking and answer-quality metrics.
//!
//! Relevance is binary and derived from the data itself: a document counts
//! as relevant to a query when its normalized text contains one of the
//! query's normalized gold answers as a substring. Ranking metrics then only
//! depend on the per-query relevance bit-vector in rank order, which is what
//! the bit-level functions here operate on. All aggregate numbers are macro
//! averages over queries, values in [0, 1].

use crate::corpus::{normalize_answer, Corpus, Document, QueryExample};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

pub const TOP_K_CUTOFFS: [usize; 3] = [1, 5, 20];
pub const NDCG_CUTOFFS: [usize; 3] = [1, 5, 20];
pub const MAP_CUTOFF: usize = 100;

/// Ranked doc ids per query id.
pub type RankedLists = BTreeMap<String, Vec<String>>;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("metric cutoffs must be at least 1")]
    InvalidCutoff,
    #[error("rankings refer to query {query_id} which is not in the dataset")]
    UnknownQuery { query_id: String },
    #[error("ranking for query {query_id} refers to unknown doc {doc_id}")]
    UnknownDoc { query_id: String, doc_id: String },
}

/// True when any normalized gold answer occurs inside the normalized
/// document text. Answers that normalize to nothing are ignored.
pub fn judge(document: &Document, answers: &[String]) -> bool {
    let text = normalize_answer(&document.text);
    answers.iter().any(|answer| {
        let answer = normalize_answer(answer);
        !answer.is_empty() && text.contains(&answer)
    })
}

/// Projects a ranked doc id list onto its relevance bit-vector.
pub fn relevance_bits(ranking: &[String], relevant: &BTreeSet<String>) -> Vec<bool> {
    ranking.iter().map(|id| relevant.contains(id)).collect()
}

/// Per-query sets of relevant doc ids, restricted to each query's retrieved
/// pool. Every example gets an entry, possibly empty.
pub type Judgments = BTreeMap<String, BTreeSet<String>>;

pub fn pool_judgments(
    corpus: &Corpus,
    examples: &[QueryExample],
    rankings: &RankedLists,
) -> Result<Judgments, MetricsError> {
    let mut judgments = Judgments::new();
    for example in examples {
        let mut relevant = BTreeSet::new();
        if let Some(ranking) = rankings.get(&example.query_id) {
            for doc_id in ranking {
                let document =
                    corpus
                        .get(doc_id)
                        .ok_or_else(|| MetricsError::UnknownDoc {
                            query_id: example.query_id.clone(),
                            doc_id: doc_id.clone(),
                        })?;
                if judge(document, &example.answers) {
                    relevant.insert(doc_id.clone());
                }
            }
        }
        judgments.insert(example.query_id.clone(), relevant);
    }
    Ok(judgments)
}

pub fn hit_in_top_k(bits: &[bool], k: usize) -> bool {
    bits.iter().take(k).any(|&b| b)
}

// Accumulated by loop rather than Iterator::sum: the empty float sum is
// -0.0, which would leak a negative zero into reports and break the
// bit-level Top-1 identity at nDCG@1.
fn dcg(bits: &[bool], k: usize) -> f64 {
    let mut total = 0.0;
    for (i, &b) in bits.iter().take(k).enumerate() {
        if b {
            total += 1.0 / (i as f64 + 2.0).log2();
        }
    }
    total
}

/// Binary-gain nDCG over one ranking. The ideal ranking places every
/// relevant doc of the pool first; a pool without relevant docs scores 0.
pub fn ndcg_from_bits(bits: &[bool], k: usize) -> f64 {
    let relevant = bits.iter().filter(|&&b| b).count();
    if relevant == 0 {
        return 0.0;
    }
    let ideal = (0..relevant.min(k))
        .map(|i| 1.0 / (i as f64 + 2.0).log2())
        .sum::<f64>();
    dcg(bits, k) / ideal
}

/// Average precision over one ranking, denominator restricted to the
/// relevant docs present in the pool and capped at `k`.
pub fn ap_from_bits(bits: &[bool], k: usize) -> f64 {
    let pool_relevant = bits.iter().filter(|&&b| b).count().min(k);
    if pool_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &b) in bits.iter().take(k).enumerate() {
        if b {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / pool_relevant as f64
}

fn macro_mean(lists: &[Vec<bool>], per_list: impl Fn(&[bool]) -> f64) -> f64 {
    if lists.is_empty() {
        return 0.0;
    }
    lists.iter().map(|bits| per_list(bits)).sum::<f64>() / lists.len() as f64
}

/// Fraction of queries with at least one relevant doc in the first `k`.
pub fn top_k_accuracy(lists: &[Vec<bool>], k: usize) -> f64 {
    macro_mean(lists, |bits| if hit_in_top_k(bits, k) { 1.0 } else { 0.0 })
}

pub fn ndcg_at_k(lists: &[Vec<bool>], k: usize) -> f64 {
    macro_mean(lists, |bits| ndcg_from_bits(bits, k))
}

pub fn map_at_k(lists: &[Vec<bool>], k: usize) -> f64 {
    macro_mean(lists, |bits| ap_from_bits(bits, k))
}

/// The evaluation conventions baked into a report, spelled out so numbers
/// stay comparable across runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conventions {
    pub relevance: String,
    pub idcg: String,
    pub map_denominator: String,
    pub zero_relevant_queries: String,
    pub missing_rankings: String,
    pub averaging: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            relevance: "binary: normalized document text contains a normalized gold answer".into(),
            idcg: "ideal ranking over the relevant docs inside the retrieved pool".into(),
            map_denominator: "relevant docs inside the retrieved pool, capped at the cutoff".into(),
            zero_relevant_queries: "score 0 and stay in the mean".into(),
            missing_rankings: "queries without a ranking count as misses".into(),
            averaging: "macro average over queries".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub pool_size: usize,
    pub relevant_in_pool: usize,
    pub hit: BTreeMap<usize, bool>,
    pub ndcg: BTreeMap<usize, f64>,
    pub ap: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub query_count: usize,
    pub top_k: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub map: BTreeMap<usize, f64>,
    pub per_query: Vec<QueryMetrics>,
    pub conventions: Conventions,
}

/// Scores ranked lists against answer-derived relevance at the default
/// cutoffs: Top-K and nDCG at 1/5/20, MAP at 100.
pub fn evaluate(
    method: &str,
    corpus: &Corpus,
    examples: &[QueryExample],
    rankings: &RankedLists,
) -> Result<MetricsReport, MetricsError> {
    evaluate_with_cutoffs(
        method,
        corpus,
        examples,
        rankings,
        &TOP_K_CUTOFFS,
        &NDCG_CUTOFFS,
        &[MAP_CUTOFF],
    )
}

pub fn evaluate_with_cutoffs(
    method: &str,
    corpus: &Corpus,
    examples: &[QueryExample],
    rankings: &RankedLists,
    top_k_cutoffs: &[usize],
    ndcg_cutoffs: &[usize],
    map_cutoffs: &[usize],
) -> Result<MetricsReport, MetricsError> {
    if examples.is_empty() {
        return Err(MetricsError::NoQueries);
    }
    if top_k_cutoffs
        .iter()
        .chain(ndcg_cutoffs)
        .chain(map_cutoffs)
        .any(|&k| k == 0)
    {
        return Err(MetricsError::InvalidCutoff);
    }
    let known: BTreeSet<&str> = examples.iter().map(|e| e.query_id.as_str()).collect();
    for query_id in rankings.keys() {
        if !known.contains(query_id.as_str()) {
            return Err(MetricsError::UnknownQuery {
                query_id: query_id.clone(),
            });
        }
    }

    // Normalized text cache so each document is normalized once per report.
    let mut normalized: HashMap<&str, String> = HashMap::new();
    let empty: Vec<String> = Vec::new();
    let mut per_query = Vec::with_capacity(examples.len());
    for example in examples {
        let ranking = rankings.get(&example.query_id).unwrap_or(&empty);
        let mut bits = Vec::with_capacity(ranking.len());
        for doc_id in ranking {
            let document =
                corpus
                    .get(doc_id)
                    .ok_or_else(|| MetricsError::UnknownDoc {
                        query_id: example.query_id.clone(),
                        doc_id: doc_id.clone(),
                    })?;
            let text = normalized
                .entry(document.id.as_str())
                .or_insert_with(|| normalize_answer(&document.text));
            let hit = example.answers.iter().any(|answer| {
                let answer = normalize_answer(answer);
                !answer.is_empty() && text.contains(&answer)
            });
            bits.push(hit);
        }
        per_query.push(QueryMetrics {
            query_id: example.query_id.clone(),
            pool_size: bits.len(),
            relevant_in_pool: bits.iter().filter(|&&b| b).count(),
            hit: top_k_cutoffs
                .iter()
                .map(|&k| (k, hit_in_top_k(&bits, k)))
                .collect(),
            ndcg: ndcg_cutoffs
                .iter()
                .map(|&k| (k, ndcg_from_bits(&bits, k)))
                .collect(),
            ap: map_cutoffs
                .iter()
                .map(|&k| (k, ap_from_bits(&bits, k)))
                .collect(),
        });
    }

    let n = per_query.len() as f64;
    let top_k = top_k_cutoffs
        .iter()
        .map(|&k| {
            let hits = per_query.iter().filter(|q| q.hit[&k]).count();
            (k, hits as f64 / n)
        })
        .collect();
    let ndcg = ndcg_cutoffs
        .iter()
        .map(|&k| (k, per_query.iter().map(|q| q.ndcg[&k]).sum::<f64>() / n))
        .collect();
    let map = map_cutoffs
        .iter()
        .map(|&k| (k, per_query.iter().map(|q| q.ap[&k]).sum::<f64>() / n))
        .collect();

    Ok(MetricsReport {
        method: method.to_string(),
        query_count: examples.len(),
        top_k,
        ndcg,
        map,
        per_query,
        conventions: Conventions::default(),
    })
}

/// Renders reports as one aligned table, values scaled to percentages.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut columns: Vec<(String, Box<dyn Fn(&MetricsReport) -> Option<f64>>)> = Vec::new();
    if let Some(first) = reports.first() {
        for &k in first.top_k.keys() {
            columns.push((
                format!("Top-{k}"),
                Box::new(move |r: &MetricsReport| r.top_k.get(&k).copied()),
            ));
        }
        for &k in first.ndcg.keys() {
            columns.push((
                format!("nDCG@{k}"),
                Box::new(move |r: &MetricsReport| r.ndcg.get(&k).copied()),
            ));
        }
        for &k in first.map.keys() {
            columns.push((
                format!("MAP@{k}"),
                Box::new(move |r: &MetricsReport| r.map.get(&k).copied()),
            ));
        }
    }

    let method_width = reports
        .iter()
        .map(|r| r.method.len())
        .chain(std::iter::once("method".len()))
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    out.push_str(&format!("{:<method_width$}", "method"));
    for (name, _) in &columns {
        out.push_str(&format!("  {name:>8}"));
    }
    out.push_str("  queries\n");
    for report in reports {
        out.push_str(&format!("{:<method_width$}", report.method));
        for (_, get) in &columns {
            match get(report) {
                Some(value) => out.push_str(&format!("  {:>8.2}", value * 100.0)),
                None => out.push_str(&format!("  {:>8}", "-")),
            }
        }
        out.push_str(&format!("  {:>7}\n", report.query_count));
    }
    out
}

/// Exact match and token-level F1 of one prediction against gold answers.
///
/// Both sides pass through answer normalization; F1 is the best over the
/// answers, with empty-versus-empty defined as a perfect match.
pub fn em_f1(prediction: &str, answers: &[String]) -> (bool, f64) {
    let pred_norm = normalize_answer(prediction);
    let pred_tokens: Vec<&str> = pred_norm.split_whitespace().collect();
    let mut em = false;
    let mut best = 0.0f64;
    for answer in answers {
        let gold_norm = normalize_answer(answer);
        if pred_norm == gold_norm {
            em = true;
        }
        best = best.max(token_f1(&pred_tokens, &gold_norm));
    }
    (em, best)
}

fn token_f1(pred: &[&str], gold_norm: &str) -> f64 {
    let gold: Vec<&str> = gold_norm.split_whitespace().collect();
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for token in &gold {
        *counts.entry(token).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for token in pred {
        if let Some(count) = counts.get_mut(token) {
            if *count > 0 {
                *count -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Aggregate answer-quality numbers for one QA run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub em: f64,
    pub f1: f64,
    pub query_count: usize,
    /// How many retrieved passages were placed in each reader prompt.
    pub contexts_used: usize,
}

impl QaReport {
    pub fn from_scores(scores: &[(bool, f64)], contexts_used: usize) -> Self {
        let n = scores.len().max(1) as f64;
        QaReport {
            em: scores.iter().filter(|(em, _)| *em).count() as f64 / n,
            f1: scores.iter().map(|(_, f1)| f1).sum::<f64>() / n,
            query_count: scores.len(),
            contexts_used,
        }
    }
}
