//! Scoring oracles: hand-computed risk arithmetic, prompt layout contracts,
//! and ordering properties of rerank and interpolate, driven by a stub
//! backend with fixed logprobs and by the n-gram reference backend.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ur3_core::corpus::{Corpus, Document};
use ur3_core::lm_backend::{
    BackendError, CountingBackend, LabeledSpan, NgramBackend, NgramConfig, ScoreBackend,
    ScoringRequest, SpanScores, TokenScoreRecord,
};
use ur3_core::retrieval::Candidate;
use ur3_core::scoring::{
    build_prompt, interpolate, rerank, score_candidate, Method, ScoringError,
};

#[derive(Clone, Default)]
struct SpanPlan {
    query: Vec<f64>,
    doc: Vec<f64>,
}

/// Stub backend keyed by the document span's text: each known document gets
/// fixed per-token logprobs for both spans.
#[derive(Default)]
struct KeyedBackend {
    by_doc: HashMap<String, SpanPlan>,
    fail_on: HashSet<String>,
}

impl KeyedBackend {
    fn with(mut self, doc_text: &str, query: Vec<f64>, doc: Vec<f64>) -> Self {
        self.by_doc.insert(doc_text.to_string(), SpanPlan { query, doc });
        self
    }

    fn failing_on(mut self, doc_text: &str) -> Self {
        self.fail_on.insert(doc_text.to_string());
        self
    }
}

fn span_text(request: &ScoringRequest, label: &str) -> String {
    let span = request
        .spans
        .iter()
        .find(|s| s.label == label)
        .expect("span label");
    request
        .full_text
        .chars()
        .skip(span.range.start)
        .take(span.range.end - span.range.start)
        .collect()
}

fn records(range_start: usize, logprobs: &[f64]) -> Vec<TokenScoreRecord> {
    logprobs
        .iter()
        .map(|&logprob| TokenScoreRecord {
            token_text: "t".into(),
            char_span: range_start..range_start + 1,
            logprob,
        })
        .collect()
}

impl ScoreBackend for KeyedBackend {
    fn score_spans(&self, request: &ScoringRequest) -> Result<SpanScores, BackendError> {
        let doc_text = span_text(request, "document");
        if self.fail_on.contains(&doc_text) {
            return Err(BackendError::Protocol {
                message: format!("stub failure for {doc_text:?}"),
            });
        }
        let plan = self.by_doc.get(&doc_text).cloned().unwrap_or_default();
        let mut scores = SpanScores::new();
        for span in &request.spans {
            let logprobs = match span.label.as_str() {
                "document" => &plan.doc,
                "query" => &plan.query,
                _ => continue,
            };
            scores.insert(span.label.clone(), records(span.range.start, logprobs));
        }
        Ok(scores)
    }

    fn generate(&self, _prompt: &str, _max_new_tokens: usize) -> Result<String, BackendError> {
        Err(BackendError::Unsupported {
            operation: "generate",
            backend: "keyed stub",
        })
    }

    fn identity(&self) -> String {
        "keyed-stub".into()
    }
}

/// Wrapper that adds a constant to every document-span logprob.
struct DocOffset<B> {
    inner: B,
    c: f64,
}

impl<B: ScoreBackend> ScoreBackend for DocOffset<B> {
    fn score_spans(&self, request: &ScoringRequest) -> Result<SpanScores, BackendError> {
        let mut scores = self.inner.score_spans(request)?;
        if let Some(records) = scores.get_mut("document") {
            for record in records {
                record.logprob += self.c;
            }
        }
        Ok(scores)
    }

    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<String, BackendError> {
        self.inner.generate(prompt, max_new_tokens)
    }

    fn identity(&self) -> String {
        format!("{}+offset", self.inner.identity())
    }
}

fn doc(id: &str, text: &str) -> Document {
    Document {
        id: id.into(),
        title: String::new(),
        text: text.into(),
    }
}

const BUDGET: usize = 10_000;

#[test]
fn risk_arithmetic_matches_hand_computation() {
    let backend = KeyedBackend::default().with(
        "cats purr",
        vec![-1.0, -2.0],
        vec![-0.5, -0.5, -2.0],
    );
    let layout = build_prompt(&doc("d", "cats purr"), "what do cats do", BUDGET).unwrap();
    let score = score_candidate(&backend, &layout, 0.25).unwrap();
    assert_eq!(score.query_nll, 1.5);
    assert_eq!(score.doc_nll, 1.0);
    assert_eq!(score.risk, 1.75);
    assert_eq!(score.query_tokens, 2);
    assert_eq!(score.doc_tokens, 3);
    assert_eq!(score.query_logprob_sum, -3.0);
    assert_eq!(score.doc_logprob_sum, -3.0);
}

#[test]
fn alpha_zero_risk_is_exactly_the_query_term() {
    let backend = KeyedBackend::default().with(
        "cats purr",
        vec![-1.3, -0.7, -2.1],
        vec![-0.9, -1.8],
    );
    let layout = build_prompt(&doc("d", "cats purr"), "what do cats do", BUDGET).unwrap();
    let score = score_candidate(&backend, &layout, 0.0).unwrap();
    assert_eq!(score.risk.to_bits(), score.query_nll.to_bits());
}

#[test]
fn prompt_renders_the_instruction_template_exactly() {
    let layout = build_prompt(&doc("d", "cats purr"), "what do cats do", BUDGET).unwrap();
    assert_eq!(
        layout.prompt,
        "Please write a question based on this passage.\n\nPassage: cats purr\n\nQuestion: what do cats do"
    );
    let doc_text: String = layout
        .prompt
        .chars()
        .skip(layout.document_span.start)
        .take(layout.document_span.end - layout.document_span.start)
        .collect();
    let query_text: String = layout
        .prompt
        .chars()
        .skip(layout.query_span.start)
        .take(layout.query_span.end - layout.query_span.start)
        .collect();
    assert_eq!(doc_text, "cats purr");
    assert_eq!(query_text, "what do cats do");
    assert!(!layout.truncated);
}

#[test]
fn long_documents_are_left_truncated_to_the_tail() {
    let body: String = std::iter::repeat("abcdefghij").take(1_000).collect();
    let document = doc("d", &body);
    let question = "which letters repeat";
    let layout = build_prompt(&document, question, 200).unwrap();
    assert!(layout.truncated);
    assert_eq!(layout.prompt.chars().count(), 200);

    let doc_text: String = layout
        .prompt
        .chars()
        .skip(layout.document_span.start)
        .take(layout.document_span.end - layout.document_span.start)
        .collect();
    let kept = doc_text.chars().count();
    let tail: String = body.chars().skip(body.chars().count() - kept).collect();
    assert_eq!(doc_text, tail);

    let query_text: String = layout
        .prompt
        .chars()
        .skip(layout.query_span.start)
        .take(layout.query_span.end - layout.query_span.start)
        .collect();
    assert_eq!(query_text, question);
}

#[test]
fn truncation_counts_characters_not_bytes() {
    let body: String = std::iter::repeat('α').take(500).collect();
    let layout = build_prompt(&doc("d", &body), "ερωτηση", 120).unwrap();
    assert!(layout.truncated);
    let doc_text: String = layout
        .prompt
        .chars()
        .skip(layout.document_span.start)
        .take(layout.document_span.end - layout.document_span.start)
        .collect();
    assert!(!doc_text.is_empty());
    assert!(doc_text.chars().all(|c| c == 'α'));
    assert_eq!(layout.prompt.chars().count(), 120);
}

#[test]
fn oversized_question_is_rejected() {
    let question: String = std::iter::repeat('q').take(300).collect();
    let err = build_prompt(&doc("d", "short"), &question, 200).unwrap_err();
    assert!(matches!(err, ScoringError::QuestionBudget { .. }));
}

#[test]
fn empty_inputs_are_rejected() {
    assert!(matches!(
        build_prompt(&doc("d", ""), "q", BUDGET).unwrap_err(),
        ScoringError::EmptyDocument
    ));
    assert!(matches!(
        build_prompt(&doc("d", "text"), "", BUDGET).unwrap_err(),
        ScoringError::EmptyQuestion
    ));
}

#[test]
fn uniform_unigram_model_scores_log_alphabet_size() {
    let backend = NgramBackend::train_with_alphabet(
        "",
        "abc",
        NgramConfig {
            order: 1,
            k: 0.5,
            max_context_tokens: 8192,
        },
    );
    assert_eq!(backend.alphabet_size(), 4);
    let layout = build_prompt(&doc("d", "ab"), "ba", BUDGET).unwrap();
    let score = score_candidate(&backend, &layout, 0.25).unwrap();
    // Each character has probability (0 + 0.5) / (0 + 0.5 * 4) = 1/4.
    let per_char = -(0.25f64.ln());
    assert_eq!(score.query_nll.to_bits(), per_char.to_bits());
    assert_eq!(score.doc_nll.to_bits(), per_char.to_bits());
    let sigma = backend.alphabet_size() as f64;
    assert!((score.query_nll - sigma.ln()).abs() < 1e-12);
}

#[test]
fn empty_span_from_backend_is_an_error() {
    let backend = KeyedBackend::default().with("cats purr", vec![], vec![-0.5]);
    let layout = build_prompt(&doc("d", "cats purr"), "what do cats do", BUDGET).unwrap();
    let err = score_candidate(&backend, &layout, 0.25).unwrap_err();
    assert!(matches!(err, ScoringError::EmptySpan { span: "query" }));
}

#[test]
fn negative_alpha_is_rejected() {
    let backend = KeyedBackend::default().with("cats purr", vec![-1.0], vec![-1.0]);
    let layout = build_prompt(&doc("d", "cats purr"), "what do cats do", BUDGET).unwrap();
    assert!(matches!(
        score_candidate(&backend, &layout, -0.25).unwrap_err(),
        ScoringError::InvalidAlpha { .. }
    ));
}

fn two_doc_fixture() -> (Corpus, Vec<Candidate>, KeyedBackend) {
    let corpus = Corpus::from_docs(vec![doc("d1", "aa"), doc("d2", "bb")]).unwrap();
    let candidates = vec![
        Candidate {
            doc_id: "d1".into(),
            rank: 1,
            score: 10.0,
        },
        Candidate {
            doc_id: "d2".into(),
            rank: 2,
            score: 5.0,
        },
    ];
    // risks at alpha 0.25: d1 -> 1.5 + 0.25 = 1.75, d2 -> 1.0 + 0.2 = 1.2
    let backend = KeyedBackend::default()
        .with("aa", vec![-1.0, -2.0], vec![-0.5, -0.5, -2.0])
        .with("bb", vec![-1.0, -1.0], vec![-0.8, -0.8]);
    (corpus, candidates, backend)
}

#[test]
fn rerank_sorts_ascending_by_risk() {
    let (corpus, candidates, backend) = two_doc_fixture();
    let result = rerank(
        &backend, &corpus, "q1", "which doc", &candidates, Method::Ur3, 0.25, BUDGET,
    )
    .unwrap();
    assert_eq!(result.query_id, "q1");
    assert_eq!(result.method, "ur3");
    let order: Vec<&str> = result.entries.iter().map(|e| e.doc_id.as_str()).collect();
    assert_eq!(order, ["d2", "d1"]);
    assert_eq!(result.entries[0].new_rank, 1);
    assert_eq!(result.entries[0].old_rank, 2);
    assert_eq!(result.entries[1].new_rank, 2);
    assert_eq!(result.entries[1].old_rank, 1);
    assert_eq!(result.entries[0].score.risk, 1.2);
    assert_eq!(result.entries[1].score.risk, 1.75);
}

#[test]
fn equal_risks_preserve_retriever_order() {
    let corpus = Corpus::from_docs(vec![doc("d1", "aa"), doc("d2", "bb")]).unwrap();
    let candidates = vec![
        Candidate {
            doc_id: "d2".into(),
            rank: 1,
            score: 9.0,
        },
        Candidate {
            doc_id: "d1".into(),
            rank: 2,
            score: 8.0,
        },
    ];
    let backend = KeyedBackend::default()
        .with("aa", vec![-1.0], vec![-1.0])
        .with("bb", vec![-1.0], vec![-1.0]);
    let result = rerank(
        &backend, &corpus, "q1", "same", &candidates, Method::Ur3, 0.25, BUDGET,
    )
    .unwrap();
    let order: Vec<&str> = result.entries.iter().map(|e| e.doc_id.as_str()).collect();
    assert_eq!(order, ["d2", "d1"]);
}

#[test]
fn upr_ignores_the_alpha_argument() {
    let (corpus, candidates, backend) = two_doc_fixture();
    let a = rerank(
        &backend, &corpus, "q1", "which doc", &candidates, Method::Upr, 0.9, BUDGET,
    )
    .unwrap();
    let b = rerank(
        &backend, &corpus, "q1", "which doc", &candidates, Method::Upr, 0.0, BUDGET,
    )
    .unwrap();
    assert_eq!(a.method, "upr");
    for (x, y) in a.entries.iter().zip(&b.entries) {
        assert_eq!(x.doc_id, y.doc_id);
        assert_eq!(x.score.risk.to_bits(), y.score.risk.to_bits());
        assert_eq!(x.score.alpha, 0.0);
    }
}

fn random_word_fixture(seed: u64) -> (Corpus, Vec<Candidate>, String, NgramBackend) {
    let words = [
        "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india",
        "juliet",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut candidates = Vec::new();
    for i in 0..20 {
        let len = rng.gen_range(4..12);
        let text: Vec<&str> = (0..len).map(|_| *words.choose(&mut rng).unwrap()).collect();
        let id = format!("d{i}");
        docs.push(doc(&id, &text.join(" ")));
        candidates.push(Candidate {
            doc_id: id,
            rank: i + 1,
            score: 100.0 - i as f64,
        });
    }
    let corpus = Corpus::from_docs(docs).unwrap();
    let question: Vec<&str> = (0..5).map(|_| *words.choose(&mut rng).unwrap()).collect();
    let train: Vec<&str> = (0..200).map(|_| *words.choose(&mut rng).unwrap()).collect();
    let backend = NgramBackend::train(&train.join(" "), NgramConfig::default());
    (corpus, candidates, question.join(" "), backend)
}

#[test]
fn alpha_zero_rerank_is_bitwise_equal_to_upr() {
    for seed in 0..5 {
        let (corpus, candidates, question, backend) = random_word_fixture(seed);
        let ur3 = rerank(
            &backend, &corpus, "q", &question, &candidates, Method::Ur3, 0.0, BUDGET,
        )
        .unwrap();
        let upr = rerank(
            &backend, &corpus, "q", &question, &candidates, Method::Upr, 0.25, BUDGET,
        )
        .unwrap();
        assert_eq!(ur3.entries.len(), upr.entries.len());
        for (a, b) in ur3.entries.iter().zip(&upr.entries) {
            assert_eq!(a.doc_id, b.doc_id);
            assert_eq!(a.new_rank, b.new_rank);
            assert_eq!(a.score.query_nll.to_bits(), b.score.query_nll.to_bits());
            assert_eq!(a.score.risk.to_bits(), b.score.risk.to_bits());
        }
    }
}

#[test]
fn constant_document_offset_shifts_every_risk_by_alpha_c() {
    let (corpus, candidates, question, backend) = random_word_fixture(7);
    let alpha = 0.25;
    let c = 0.75;
    let base = rerank(
        &backend, &corpus, "q", &question, &candidates, Method::Ur3, alpha, BUDGET,
    )
    .unwrap();
    let shifted_backend = DocOffset { inner: backend, c };
    let shifted = rerank(
        &shifted_backend, &corpus, "q", &question, &candidates, Method::Ur3, alpha, BUDGET,
    )
    .unwrap();

    let base_order: Vec<&str> = base.entries.iter().map(|e| e.doc_id.as_str()).collect();
    let shifted_order: Vec<&str> = shifted.entries.iter().map(|e| e.doc_id.as_str()).collect();
    assert_eq!(base_order, shifted_order);

    let by_id: HashMap<&str, f64> = base
        .entries
        .iter()
        .map(|e| (e.doc_id.as_str(), e.score.risk))
        .collect();
    for entry in &shifted.entries {
        let before = by_id[entry.doc_id.as_str()];
        let expected = before - alpha * c;
        assert!(
            (entry.score.risk - expected).abs() < 1e-12,
            "risk {} vs expected {expected}",
            entry.score.risk
        );
        assert_eq!(
            entry.score.query_nll.to_bits(),
            base.entries
                .iter()
                .find(|e| e.doc_id == entry.doc_id)
                .unwrap()
                .score
                .query_nll
                .to_bits()
        );
    }
}

#[test]
fn shuffling_candidates_changes_only_bookkeeping() {
    let (corpus, mut candidates, question, backend) = random_word_fixture(11);
    let base = rerank(
        &backend, &corpus, "q", &question, &candidates, Method::Ur3, 0.25, BUDGET,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    candidates.shuffle(&mut rng);
    let shuffled = rerank(
        &backend, &corpus, "q", &question, &candidates, Method::Ur3, 0.25, BUDGET,
    )
    .unwrap();
    let base_order: Vec<&str> = base.entries.iter().map(|e| e.doc_id.as_str()).collect();
    let shuffled_order: Vec<&str> = shuffled.entries.iter().map(|e| e.doc_id.as_str()).collect();
    assert_eq!(base_order, shuffled_order);
    for (a, b) in base.entries.iter().zip(&shuffled.entries) {
        assert_eq!(a.new_rank, b.new_rank);
        assert_eq!(a.score.risk.to_bits(), b.score.risk.to_bits());
    }
}

#[test]
fn one_backend_call_per_candidate() {
    let (corpus, candidates, question, backend) = random_word_fixture(3);
    let counting = CountingBackend::new(backend);
    rerank(
        &counting, &corpus, "q", &question, &candidates, Method::Ur3, 0.25, BUDGET,
    )
    .unwrap();
    assert_eq!(counting.score_calls(), candidates.len() as u64);
}

#[test]
fn scoring_failures_surface_per_candidate() {
    let (corpus, candidates, backend) = two_doc_fixture();
    let backend = backend.failing_on("bb");
    let err = rerank(
        &backend, &corpus, "q1", "which doc", &candidates, Method::Ur3, 0.25, BUDGET,
    )
    .unwrap_err();
    match err {
        ScoringError::CandidateFailures {
            query_id,
            total,
            failures,
        } => {
            assert_eq!(query_id, "q1");
            assert_eq!(total, 2);
            assert_eq!(failures.len(), 1);
            assert_eq!(failures[0].0, "d2");
            assert!(failures[0].1.contains("stub failure"));
        }
        other => panic!("expected CandidateFailures, got {other:?}"),
    }
}

#[test]
fn unknown_candidate_doc_id_is_a_failure() {
    let (corpus, mut candidates, backend) = two_doc_fixture();
    candidates.push(Candidate {
        doc_id: "ghost".into(),
        rank: 3,
        score: 1.0,
    });
    let err = rerank(
        &backend, &corpus, "q1", "which doc", &candidates, Method::Ur3, 0.25, BUDGET,
    )
    .unwrap_err();
    match err {
        ScoringError::CandidateFailures { failures, .. } => {
            assert_eq!(failures.len(), 1);
            assert_eq!(failures[0].0, "ghost");
        }
        other => panic!("expected CandidateFailures, got {other:?}"),
    }
}

#[test]
fn empty_candidate_list_is_rejected() {
    let (corpus, _, backend) = two_doc_fixture();
    let err = rerank(
        &backend, &corpus, "q1", "which doc", &[], Method::Ur3, 0.25, BUDGET,
    )
    .unwrap_err();
    assert!(matches!(err, ScoringError::NoCandidates { .. }));
}

#[test]
fn interpolation_endpoints_recover_the_input_orders() {
    let (corpus, candidates, backend) = two_doc_fixture();
    let reranked = rerank(
        &backend, &corpus, "q1", "which doc", &candidates, Method::Upr, 0.0, BUDGET,
    )
    .unwrap();
    // Retriever prefers d1; UPR prefers d2 (query_nll 1.0 vs 1.5).
    let retriever_first = interpolate(&candidates, &reranked, 1.0).unwrap();
    let order: Vec<&str> = retriever_first
        .entries
        .iter()
        .map(|e| e.doc_id.as_str())
        .collect();
    assert_eq!(order, ["d1", "d2"]);
    assert_eq!(retriever_first.method, "interpolation-of-upr");

    let reranker_only = interpolate(&candidates, &reranked, 0.0).unwrap();
    let order: Vec<&str> = reranker_only
        .entries
        .iter()
        .map(|e| e.doc_id.as_str())
        .collect();
    assert_eq!(order, ["d2", "d1"]);
}

#[test]
fn interpolation_hand_example_ties_break_by_old_rank() {
    // Retriever scores [10, 0]; risks [2.0, 1.0]; lambda 0.5.
    // Normalized: retriever [1, 0], negated risk [0, 1]; combined [0.5, 0.5].
    let corpus = Corpus::from_docs(vec![doc("d1", "aa"), doc("d2", "bb")]).unwrap();
    let candidates = vec![
        Candidate {
            doc_id: "d1".into(),
            rank: 1,
            score: 10.0,
        },
        Candidate {
            doc_id: "d2".into(),
            rank: 2,
            score: 0.0,
        },
    ];
    let backend = KeyedBackend::default()
        .with("aa", vec![-2.0], vec![-1.0])
        .with("bb", vec![-1.0], vec![-1.0]);
    let reranked = rerank(
        &backend, &corpus, "q1", "which doc", &candidates, Method::Upr, 0.0, BUDGET,
    )
    .unwrap();
    let combined = interpolate(&candidates, &reranked, 0.5).unwrap();
    for entry in &combined.entries {
        assert_eq!(entry.combined.unwrap(), 0.5);
    }
    let order: Vec<&str> = combined.entries.iter().map(|e| e.doc_id.as_str()).collect();
    assert_eq!(order, ["d1", "d2"]);
}

#[test]
fn interpolation_rejects_doc_id_mismatch() {
    let (corpus, candidates, backend) = two_doc_fixture();
    let reranked = rerank(
        &backend, &corpus, "q1", "which doc", &candidates, Method::Ur3, 0.25, BUDGET,
    )
    .unwrap();
    let mut other = candidates.clone();
    other[1].doc_id = "d9".into();
    assert!(matches!(
        interpolate(&other, &reranked, 0.5).unwrap_err(),
        ScoringError::DocIdMismatch { .. }
    ));
}

#[test]
fn interpolation_rejects_out_of_range_lambda() {
    let (corpus, candidates, backend) = two_doc_fixture();
    let reranked = rerank(
        &backend, &corpus, "q1", "which doc", &candidates, Method::Ur3, 0.25, BUDGET,
    )
    .unwrap();
    assert!(matches!(
        interpolate(&candidates, &reranked, 1.5).unwrap_err(),
        ScoringError::InvalidLambda { .. }
    ));
}

#[test]
fn span_labels_are_wired_through_the_scoring_request() {
    // Sanity-check the stub itself: the layout spans land on the document and
    // question text, so the keyed backend sees the right key.
    let layout = build_prompt(&doc("d", "cats purr"), "what do cats do", BUDGET).unwrap();
    let request = ScoringRequest::new(
        layout.prompt.clone(),
        vec![
            LabeledSpan::new("document", layout.document_span.clone()),
            LabeledSpan::new("query", layout.query_span.clone()),
        ],
    );
    assert_eq!(span_text(&request, "document"), "cats purr");
    assert_eq!(span_text(&request, "query"), "what do cats do");
}
