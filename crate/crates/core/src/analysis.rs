//! Post-hoc diagnostics over run artifacts: where relevant documents sit in
//! the ranking, how far re-ranking moved them, how Top-1 outcomes changed
//! between two methods, how the metrics respond to the risk weight, and how
//! latency scales with pool size. Everything here is pure recomputation over
//! stored records; no backend is involved, and each analysis renders to a
//! small CSV with a one-line header.

use crate::corpus::{Corpus, QueryExample};
use crate::metrics::{
    evaluate_with_cutoffs, Judgments, MetricsError, RankedLists, NDCG_CUTOFFS,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("query {query_id} is missing from one of the runs")]
    MissingQuery { query_id: String },
    #[error("runs rank different candidate pools for query {query_id}")]
    PoolMismatch { query_id: String },
    #[error("query {query_id} has an empty ranking")]
    EmptyRanking { query_id: String },
    #[error("no stored scores for query {query_id} doc {doc_id}")]
    MissingScore { query_id: String, doc_id: String },
    #[error("duplicate stored score for query {query_id} doc {doc_id}")]
    DuplicateRecord { query_id: String, doc_id: String },
    #[error("non-finite NLL stored for query {query_id} doc {doc_id}")]
    NonFinite { query_id: String, doc_id: String },
    #[error("sweep alpha must be finite and non-negative, got {alpha}")]
    InvalidAlpha { alpha: f64 },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Fraction of all relevant documents falling into each rank bin. The pool
/// size is the longest ranking; rank r (1-based) lands in bin
/// `(r - 1) * bins / pool`. Fractions sum to 1 when any relevant doc exists.
pub fn relevant_position_histogram(
    lists: &[Vec<bool>],
    bins: usize,
) -> Result<Vec<f64>, AnalysisError> {
    if bins == 0 {
        return Err(AnalysisError::NoBins);
    }
    let pool = lists.iter().map(Vec::len).max().unwrap_or(0);
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for list in lists {
        for (i, &bit) in list.iter().enumerate() {
            if bit {
                counts[i * bins / pool] += 1;
                total += 1;
            }
        }
    }
    if total == 0 {
        return Ok(vec![0.0; bins]);
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// How one relevant document moved between two runs over the same pool.
/// Positive shift means it climbed toward rank 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankShiftRecord {
    pub query_id: String,
    pub doc_id: String,
    pub rank_before: usize,
    pub rank_after: usize,
    pub shift: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub count: usize,
    pub mean: f64,
    /// Population variance of the shifts.
    pub variance: f64,
}

/// One record per relevant document, ordered by query id and then by the
/// document's rank in the `before` run.
pub fn rank_shift(
    before: &RankedLists,
    after: &RankedLists,
    judgments: &Judgments,
) -> Result<(Vec<RankShiftRecord>, ShiftSummary), AnalysisError> {
    for query_id in before.keys().chain(after.keys()) {
        if !before.contains_key(query_id) || !after.contains_key(query_id) {
            return Err(AnalysisError::MissingQuery {
                query_id: query_id.clone(),
            });
        }
    }

    let empty = BTreeSet::new();
    let mut records = Vec::new();
    for (query_id, list_before) in before {
        let list_after = &after[query_id];
        let pool_before: BTreeSet<&str> = list_before.iter().map(String::as_str).collect();
        let pool_after: BTreeSet<&str> = list_after.iter().map(String::as_str).collect();
        if pool_before != pool_after || list_before.len() != list_after.len() {
            return Err(AnalysisError::PoolMismatch {
                query_id: query_id.clone(),
            });
        }
        let position_after: HashMap<&str, usize> = list_after
            .iter()
            .enumerate()
            .map(|(i, d)| (d.as_str(), i + 1))
            .collect();
        let relevant = judgments.get(query_id).unwrap_or(&empty);
        for (i, doc_id) in list_before.iter().enumerate() {
            if relevant.contains(doc_id) {
                let rank_before = i + 1;
                let rank_after = position_after[doc_id.as_str()];
                records.push(RankShiftRecord {
                    query_id: query_id.clone(),
                    doc_id: doc_id.clone(),
                    rank_before,
                    rank_after,
                    shift: rank_before as i64 - rank_after as i64,
                });
            }
        }
    }

    let count = records.len();
    let (mean, variance) = if count == 0 {
        (0.0, 0.0)
    } else {
        let n = count as f64;
        let mean = records.iter().map(|r| r.shift as f64).sum::<f64>() / n;
        let variance = records
            .iter()
            .map(|r| {
                let d = r.shift as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        (mean, variance)
    };
    Ok((
        records,
        ShiftSummary {
            count,
            mean,
            variance,
        },
    ))
}

/// Top-1 outcome of a query under a baseline and a treatment run.
///
/// Class 0: the treatment fixed an irrelevant Top-1. Class 1: it broke a
/// relevant one. Class 2: relevant under both. Class 3: irrelevant under
/// both. The stored NLLs belong to the baseline run's Top-1 document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationClass {
    pub query_id: String,
    pub class: u8,
    pub baseline_query_nll: f64,
    pub baseline_doc_nll: f64,
}

pub fn top1_calibration(
    baseline: &RankedLists,
    treatment: &RankedLists,
    judgments: &Judgments,
    baseline_scores: &BTreeMap<(String, String), (f64, f64)>,
) -> Result<Vec<CalibrationClass>, AnalysisError> {
    for query_id in baseline.keys().chain(treatment.keys()) {
        if !baseline.contains_key(query_id) || !treatment.contains_key(query_id) {
            return Err(AnalysisError::MissingQuery {
                query_id: query_id.clone(),
            });
        }
    }

    let empty = BTreeSet::new();
    let mut classes = Vec::with_capacity(baseline.len());
    for (query_id, baseline_list) in baseline {
        let top1 = |list: &Vec<String>| -> Result<String, AnalysisError> {
            list.first().cloned().ok_or_else(|| AnalysisError::EmptyRanking {
                query_id: query_id.clone(),
            })
        };
        let baseline_top = top1(baseline_list)?;
        let treatment_top = top1(&treatment[query_id])?;
        let relevant = judgments.get(query_id).unwrap_or(&empty);
        let class = match (
            relevant.contains(&baseline_top),
            relevant.contains(&treatment_top),
        ) {
            (false, true) => 0,
            (true, false) => 1,
            (true, true) => 2,
            (false, false) => 3,
        };
        let &(query_nll, doc_nll) = baseline_scores
            .get(&(query_id.clone(), baseline_top.clone()))
            .ok_or_else(|| AnalysisError::MissingScore {
                query_id: query_id.clone(),
                doc_id: baseline_top.clone(),
            })?;
        classes.push(CalibrationClass {
            query_id: query_id.clone(),
            class,
            baseline_query_nll: query_nll,
            baseline_doc_nll: doc_nll,
        });
    }
    Ok(classes)
}

pub fn class_counts(classes: &[CalibrationClass]) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for class in classes {
        counts[class.class as usize] += 1;
    }
    counts
}

/// Stored per-candidate scores, enough to recombine the risk under any
/// weight without touching the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub query_id: String,
    pub doc_id: String,
    pub old_rank: usize,
    pub query_nll: f64,
    pub doc_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub ndcg: BTreeMap<usize, f64>,
}

/// Recomputes risks from stored NLLs for each weight, re-sorts every pool
/// with the same ordering rule as the re-ranker (ascending risk, ties by
/// old rank), and evaluates nDCG. Purely offline: zero backend calls.
pub fn alpha_sweep(
    corpus: &Corpus,
    examples: &[QueryExample],
    records: &[CandidateRecord],
    alphas: &[f64],
) -> Result<Vec<AlphaRow>, AnalysisError> {
    let mut seen = BTreeSet::new();
    for record in records {
        if !record.query_nll.is_finite() || !record.doc_nll.is_finite() {
            return Err(AnalysisError::NonFinite {
                query_id: record.query_id.clone(),
                doc_id: record.doc_id.clone(),
            });
        }
        if !seen.insert((record.query_id.as_str(), record.doc_id.as_str())) {
            return Err(AnalysisError::DuplicateRecord {
                query_id: record.query_id.clone(),
                doc_id: record.doc_id.clone(),
            });
        }
    }
    let mut by_query: BTreeMap<&str, Vec<&CandidateRecord>> = BTreeMap::new();
    for record in records {
        by_query.entry(&record.query_id).or_default().push(record);
    }

    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(AnalysisError::InvalidAlpha { alpha });
        }
        let mut rankings = RankedLists::new();
        for (query_id, pool) in &by_query {
            let mut pool = pool.clone();
            pool.sort_by(|a, b| {
                let risk_a = a.query_nll + alpha * a.doc_nll;
                let risk_b = b.query_nll + alpha * b.doc_nll;
                risk_a
                    .partial_cmp(&risk_b)
                    .expect("finite risks")
                    .then(a.old_rank.cmp(&b.old_rank))
            });
            rankings.insert(
                query_id.to_string(),
                pool.iter().map(|r| r.doc_id.clone()).collect(),
            );
        }
        let report = evaluate_with_cutoffs(
            "sweep",
            corpus,
            examples,
            &rankings,
            &[],
            &NDCG_CUTOFFS,
            &[],
        )?;
        rows.push(AlphaRow {
            alpha,
            ndcg: report.ndcg,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub candidates: usize,
    pub queries: usize,
    pub mean_seconds: f64,
}

/// Groups per-query wall times by candidate count.
pub fn timing_report(samples: &[(usize, f64)]) -> Vec<TimingRow> {
    let mut grouped: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for &(candidates, seconds) in samples {
        let slot = grouped.entry(candidates).or_insert((0, 0.0));
        slot.0 += 1;
        slot.1 += seconds;
    }
    grouped
        .into_iter()
        .map(|(candidates, (queries, total))| TimingRow {
            candidates,
            queries,
            mean_seconds: total / queries as f64,
        })
        .collect()
}

pub fn render_histogram_csv(hist: &[f64]) -> String {
    let mut out = String::from("bin,fraction\n");
    for (i, fraction) in hist.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, fraction));
    }
    out
}

pub fn render_shift_csv(records: &[RankShiftRecord]) -> String {
    let mut out = String::from("query_id,doc_id,rank_before,rank_after,shift_positive_means_improved\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.query_id, r.doc_id, r.rank_before, r.rank_after, r.shift
        ));
    }
    out
}

pub fn render_calibration_csv(classes: &[CalibrationClass]) -> String {
    let mut out = String::from("query_id,class,baseline_query_nll,baseline_doc_nll\n");
    for c in classes {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.query_id, c.class, c.baseline_query_nll, c.baseline_doc_nll
        ));
    }
    out
}

pub fn render_alpha_sweep_csv(rows: &[AlphaRow]) -> String {
    let mut out = String::from("alpha");
    if let Some(first) = rows.first() {
        for k in first.ndcg.keys() {
            out.push_str(&format!(",ndcg_at_{k}"));
        }
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{}", row.alpha));
        for value in row.ndcg.values() {
            out.push_str(&format!(",{value}"));
        }
        out.push('\n');
    }
    out
}

pub fn render_timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("candidates,queries,mean_seconds\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.candidates, row.queries, row.mean_seconds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_mapping_spreads_small_pools() {
        // Pool of 3, ten bins: ranks land in bins 0, 3 and 6.
        let lists = vec![vec![true, true, true]];
        let hist = relevant_position_histogram(&lists, 10).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(hist[0], third);
        assert_eq!(hist[3], third);
        assert_eq!(hist[6], third);
        assert_eq!(hist.iter().filter(|&&f| f > 0.0).count(), 3);
    }

    #[test]
    fn empty_input_yields_zero_histogram() {
        assert_eq!(relevant_position_histogram(&[], 4).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn class_counts_tally_by_class() {
        let classes = vec![
            CalibrationClass {
                query_id: "a".into(),
                class: 0,
                baseline_query_nll: 0.0,
                baseline_doc_nll: 0.0,
            },
            CalibrationClass {
                query_id: "b".into(),
                class: 3,
                baseline_query_nll: 0.0,
                baseline_doc_nll: 0.0,
            },
            CalibrationClass {
                query_id: "c".into(),
                class: 3,
                baseline_query_nll: 0.0,
                baseline_doc_nll: 0.0,
            },
        ];
        assert_eq!(class_counts(&classes), [1, 0, 0, 2]);
    }

    #[test]
    fn timing_of_single_sample_is_that_sample() {
        let rows = timing_report(&[(1, 0.125)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].candidates, 1);
        assert_eq!(rows[0].queries, 1);
        assert_eq!(rows[0].mean_seconds, 0.125);
    }

    #[test]
    fn alpha_sweep_csv_of_no_rows_is_just_the_header() {
        assert_eq!(render_alpha_sweep_csv(&[]), "alpha\n");
    }
}
