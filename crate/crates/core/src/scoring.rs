//! Risk scoring and re-ranking.
//!
//! Each candidate document is rendered into a fixed instruction prompt that
//! asks the model to write a question for the passage. The backend scores the
//! document span and the question span in one inference; the candidate's risk
//! is `query_nll + alpha * doc_nll`, both terms mean negative logprob per
//! token. Candidates are re-ranked by ascending risk. With `alpha` 0 the risk
//! collapses to the query term alone, which is the plain query-likelihood
//! re-ranker; the interpolation baseline mixes normalized retriever scores
//! with normalized negated risks.

use crate::corpus::{Corpus, Document};
use crate::lm_backend::{BackendError, LabeledSpan, ScoreBackend, ScoringRequest};
use crate::retrieval::Candidate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::ops::Range;
use thiserror::Error;

const INSTRUCTION: &str = "Please write a question based on this passage.";
const PASSAGE_PREFIX: &str = "\n\nPassage: ";
const QUESTION_PREFIX: &str = "\n\nQuestion: ";

pub const DEFAULT_ALPHA: f64 = 0.25;
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("document text is empty")]
    EmptyDocument,
    #[error("question is empty")]
    EmptyQuestion,
    #[error(
        "instruction and question occupy {needed} of {budget} prompt characters, leaving no room for document text"
    )]
    QuestionBudget { needed: usize, budget: usize },
    #[error("alpha must be finite and non-negative, got {alpha}")]
    InvalidAlpha { alpha: f64 },
    #[error("interpolation weight must lie in [0, 1], got {lambda}")]
    InvalidLambda { lambda: f64 },
    #[error("backend returned no scored tokens for the {span} span")]
    EmptySpan { span: &'static str },
    #[error("non-finite {term} while scoring: {value}")]
    NonFinite { term: &'static str, value: f64 },
    #[error("no candidates to rerank for query {query_id}")]
    NoCandidates { query_id: String },
    #[error(
        "{failed} of {total} candidates failed to score for query {query_id}",
        failed = failures.len()
    )]
    CandidateFailures {
        query_id: String,
        total: usize,
        /// `(doc_id, error message)` for every failed candidate.
        failures: Vec<(String, String)>,
    },
    #[error("interpolation inputs rank different documents for query {query_id}")]
    DocIdMismatch { query_id: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// A rendered prompt with character spans locating the document text and the
/// question text inside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLayout {
    pub prompt: String,
    pub document_span: Range<usize>,
    pub query_span: Range<usize>,
    /// Set when the document was cut to fit the prompt budget.
    pub truncated: bool,
}

/// Renders the scoring prompt for one (document, question) pair.
///
/// `max_context` is a character budget for the whole prompt. When the
/// document does not fit, its head is dropped and the tail kept; the question
/// is never cut. Spans are character ranges into the returned prompt.
pub fn build_prompt(
    document: &Document,
    question: &str,
    max_context: usize,
) -> Result<PromptLayout, ScoringError> {
    if document.text.is_empty() {
        return Err(ScoringError::EmptyDocument);
    }
    if question.is_empty() {
        return Err(ScoringError::EmptyQuestion);
    }

    let overhead = INSTRUCTION.chars().count()
        + PASSAGE_PREFIX.chars().count()
        + QUESTION_PREFIX.chars().count()
        + question.chars().count();
    if overhead >= max_context {
        return Err(ScoringError::QuestionBudget {
            needed: overhead,
            budget: max_context,
        });
    }

    let room = max_context - overhead;
    let doc_chars = document.text.chars().count();
    let (doc_part, truncated) = if doc_chars > room {
        let (cut, _) = document
            .text
            .char_indices()
            .nth(doc_chars - room)
            .expect("skip count below char count");
        (&document.text[cut..], true)
    } else {
        (document.text.as_str(), false)
    };

    let doc_start = INSTRUCTION.chars().count() + PASSAGE_PREFIX.chars().count();
    let doc_end = doc_start + doc_part.chars().count();
    let query_start = doc_end + QUESTION_PREFIX.chars().count();
    let query_end = query_start + question.chars().count();

    let mut prompt = String::with_capacity(
        INSTRUCTION.len()
            + PASSAGE_PREFIX.len()
            + doc_part.len()
            + QUESTION_PREFIX.len()
            + question.len(),
    );
    prompt.push_str(INSTRUCTION);
    prompt.push_str(PASSAGE_PREFIX);
    prompt.push_str(doc_part);
    prompt.push_str(QUESTION_PREFIX);
    prompt.push_str(question);

    Ok(PromptLayout {
        prompt,
        document_span: doc_start..doc_end,
        query_span: query_start..query_end,
        truncated,
    })
}

/// The two NLL terms and their combination for one candidate.
///
/// `query_nll` is the mean negative logprob per question token given the
/// document; `doc_nll` the same for the document text itself. Raw sums and
/// token counts are kept so the risk can be recombined under any alpha
/// without another backend call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub query_nll: f64,
    pub doc_nll: f64,
    pub alpha: f64,
    pub risk: f64,
    pub query_tokens: usize,
    pub doc_tokens: usize,
    pub query_logprob_sum: f64,
    pub doc_logprob_sum: f64,
    pub truncated: bool,
}

impl RiskScore {
    /// Recomputes the combined risk under a different weight, reusing the
    /// stored NLL terms. `with_alpha(alpha)` on a score produced with the
    /// same alpha reproduces `risk` bit for bit.
    pub fn with_alpha(&self, alpha: f64) -> f64 {
        self.query_nll + alpha * self.doc_nll
    }
}

const DOCUMENT_LABEL: &str = "document";
const QUERY_LABEL: &str = "query";

/// Scores one candidate prompt. Both spans are scored by a single backend
/// inference over the rendered prompt.
pub fn score_candidate<B: ScoreBackend + ?Sized>(
    backend: &B,
    layout: &PromptLayout,
    alpha: f64,
) -> Result<RiskScore, ScoringError> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(ScoringError::InvalidAlpha { alpha });
    }

    let request = ScoringRequest::new(
        layout.prompt.clone(),
        vec![
            LabeledSpan::new(DOCUMENT_LABEL, layout.document_span.clone()),
            LabeledSpan::new(QUERY_LABEL, layout.query_span.clone()),
        ],
    );
    let scores = backend.score_spans(&request)?;

    let doc_records = scores.get(DOCUMENT_LABEL).map(Vec::as_slice).unwrap_or(&[]);
    let query_records = scores.get(QUERY_LABEL).map(Vec::as_slice).unwrap_or(&[]);
    if doc_records.is_empty() {
        return Err(ScoringError::EmptySpan { span: "document" });
    }
    if query_records.is_empty() {
        return Err(ScoringError::EmptySpan { span: "query" });
    }

    let doc_logprob_sum: f64 = doc_records.iter().map(|r| r.logprob).sum();
    let query_logprob_sum: f64 = query_records.iter().map(|r| r.logprob).sum();
    let doc_tokens = doc_records.len();
    let query_tokens = query_records.len();
    let doc_nll = -(doc_logprob_sum / doc_tokens as f64);
    let query_nll = -(query_logprob_sum / query_tokens as f64);
    if !query_nll.is_finite() {
        return Err(ScoringError::NonFinite {
            term: "query NLL",
            value: query_nll,
        });
    }
    if !doc_nll.is_finite() {
        return Err(ScoringError::NonFinite {
            term: "document NLL",
            value: doc_nll,
        });
    }

    Ok(RiskScore {
        query_nll,
        doc_nll,
        alpha,
        risk: query_nll + alpha * doc_nll,
        query_tokens,
        doc_tokens,
        query_logprob_sum,
        doc_logprob_sum,
        truncated: layout.truncated,
    })
}

/// Re-ranking strategy: full risk or the query term alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ur3,
    Upr,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Ur3 => "ur3",
            Method::Upr => "upr",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ur3" => Ok(Method::Ur3),
            "upr" => Ok(Method::Upr),
            other => Err(format!("unknown rerank method {other:?}")),
        }
    }
}

/// One scored candidate in a re-ranked list. Ranks are 1-based; `old_rank`
/// is the retriever's rank, `new_rank` the re-ranked position. `combined` is
/// only set by interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    pub old_rank: usize,
    pub new_rank: usize,
    pub score: RiskScore,
    pub combined: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResult {
    pub query_id: String,
    pub method: String,
    pub entries: Vec<RankedDoc>,
}

/// Scores every candidate for one query and sorts ascending by risk, ties
/// broken by the retriever's order. Candidates are scored in parallel up to
/// the backend's own in-flight bound.
///
/// Any candidate failure aborts the whole query: the error lists each failed
/// candidate with its message, so nothing is dropped silently.
#[allow(clippy::too_many_arguments)]
pub fn rerank<B: ScoreBackend + ?Sized>(
    backend: &B,
    corpus: &Corpus,
    query_id: &str,
    question: &str,
    candidates: &[Candidate],
    method: Method,
    alpha: f64,
    max_context: usize,
) -> Result<RerankResult, ScoringError> {
    if candidates.is_empty() {
        return Err(ScoringError::NoCandidates {
            query_id: query_id.to_string(),
        });
    }
    let alpha = match method {
        Method::Ur3 => alpha,
        Method::Upr => 0.0,
    };
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(ScoringError::InvalidAlpha { alpha });
    }

    let scored: Vec<(usize, Result<RiskScore, ScoringError>)> = candidates
        .par_iter()
        .enumerate()
        .map(|(ordinal, candidate)| {
            let result = corpus
                .get(&candidate.doc_id)
                .ok_or_else(|| {
                    ScoringError::CandidateFailures {
                        query_id: query_id.to_string(),
                        total: 0,
                        failures: vec![(
                            candidate.doc_id.clone(),
                            "doc_id not present in corpus".into(),
                        )],
                    }
                })
                .and_then(|document| {
                    let layout = build_prompt(document, question, max_context)?;
                    score_candidate(backend, &layout, alpha)
                });
            (ordinal, result)
        })
        .collect();

    let mut failures = Vec::new();
    let mut entries = Vec::with_capacity(candidates.len());
    for (ordinal, result) in scored {
        let candidate = &candidates[ordinal];
        match result {
            Ok(score) => entries.push(RankedDoc {
                doc_id: candidate.doc_id.clone(),
                old_rank: candidate.rank,
                new_rank: 0,
                score,
                combined: None,
            }),
            Err(ScoringError::CandidateFailures { failures: inner, .. }) => {
                failures.extend(inner);
            }
            Err(err) => failures.push((candidate.doc_id.clone(), err.to_string())),
        }
    }
    if !failures.is_empty() {
        failures.sort();
        return Err(ScoringError::CandidateFailures {
            query_id: query_id.to_string(),
            total: candidates.len(),
            failures,
        });
    }

    entries.sort_by(|a, b| {
        a.score
            .risk
            .partial_cmp(&b.score.risk)
            .expect("risks are finite")
            .then(a.old_rank.cmp(&b.old_rank))
    });
    for (index, entry) in entries.iter_mut().enumerate() {
        entry.new_rank = index + 1;
    }

    Ok(RerankResult {
        query_id: query_id.to_string(),
        method: method.tag().to_string(),
        entries,
    })
}

/// Linearly combines retriever scores with re-ranker scores.
///
/// Both score lists are min-max normalized to [0, 1] per query (the risk is
/// negated first so larger means better on both sides), then mixed as
/// `lambda * retriever + (1 - lambda) * reranker` and sorted descending.
/// When all scores on a side are equal, that side contributes 0.5 for every
/// document.
pub fn interpolate(
    retriever: &[Candidate],
    reranked: &RerankResult,
    lambda: f64,
) -> Result<RerankResult, ScoringError> {
    if !lambda.is_finite() || !(0.0..=1.0).contains(&lambda) {
        return Err(ScoringError::InvalidLambda { lambda });
    }
    let retriever_ids: BTreeSet<&str> = retriever.iter().map(|c| c.doc_id.as_str()).collect();
    let reranked_ids: BTreeSet<&str> = reranked.entries.iter().map(|e| e.doc_id.as_str()).collect();
    if retriever_ids != reranked_ids || retriever.len() != reranked.entries.len() {
        return Err(ScoringError::DocIdMismatch {
            query_id: reranked.query_id.clone(),
        });
    }

    let retriever_norm = min_max_normalize(&retriever.iter().map(|c| c.score).collect::<Vec<_>>());
    let retriever_by_id: std::collections::HashMap<&str, f64> = retriever
        .iter()
        .zip(&retriever_norm)
        .map(|(c, &v)| (c.doc_id.as_str(), v))
        .collect();
    let reranker_norm = min_max_normalize(
        &reranked
            .entries
            .iter()
            .map(|e| -e.score.risk)
            .collect::<Vec<_>>(),
    );

    let mut entries: Vec<RankedDoc> = reranked
        .entries
        .iter()
        .zip(&reranker_norm)
        .map(|(entry, &rr)| {
            let rs = retriever_by_id[entry.doc_id.as_str()];
            let mut entry = entry.clone();
            entry.combined = Some(lambda * rs + (1.0 - lambda) * rr);
            entry
        })
        .collect();
    entries.sort_by(|a, b| {
        b.combined
            .partial_cmp(&a.combined)
            .expect("combined scores are finite")
            .then(a.old_rank.cmp(&b.old_rank))
    });
    for (index, entry) in entries.iter_mut().enumerate() {
        entry.new_rank = index + 1;
    }

    Ok(RerankResult {
        query_id: reranked.query_id.clone(),
        method: format!("interpolation-of-{}", reranked.method),
        entries,
    })
}

fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|&v| (v - min) / (max - min)).collect()
}
