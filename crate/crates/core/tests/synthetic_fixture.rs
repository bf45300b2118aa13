//! Oracle tests for the synthetic retrieval fixture.
//!
//! The fixture fabricates trials in which one of several character-level
//! sources produced both the question and exactly one document. A backend
//! trained on held-out text from the questioning source should pull that
//! document to the top, while plain lexical matching stays fallible. The
//! tests here pin the generator's determinism, its output discipline, and
//! the statistical separation the whole scheme depends on.

use std::collections::BTreeSet;

use ur3_core::lm_backend::{NgramBackend, NgramConfig, ScoreBackend};
use ur3_core::metrics::judge;
use ur3_core::synthetic::{
    bm25_ordering, generate_trial, run_fixture, run_trial, FixtureManifest, SyntheticConfig,
    DEFAULT_SOURCES, DEFAULT_TRIALS, TOP1_THRESHOLD,
};

fn small_config() -> SyntheticConfig {
    SyntheticConfig {
        trials: 12,
        ..SyntheticConfig::default()
    }
}

/// Mean per-character negative log likelihood of `text` under `backend`,
/// measured on the raw string without any prompt template.
fn mean_nll(backend: &NgramBackend, text: &str) -> f64 {
    use ur3_core::lm_backend::{LabeledSpan, ScoringRequest};
    let request = ScoringRequest {
        full_text: text.to_string(),
        spans: vec![LabeledSpan {
            label: "document".to_string(),
            range: 0..text.len(),
        }],
    };
    let scores = backend.score_spans(&request).expect("scoring should succeed");
    let records = &scores["document"];
    let mut total = 0.0;
    for record in records {
        total += record.logprob;
    }
    -(total / records.len() as f64)
}

#[test]
fn generation_is_deterministic() {
    let config = small_config();
    for trial in [0, 3, 11] {
        let a = generate_trial(&config, trial);
        let b = generate_trial(&config, trial);
        assert_eq!(a.target_doc_id, b.target_doc_id);
        assert_eq!(a.example.question, b.example.question);
        assert_eq!(a.example.answers, b.example.answers);
        assert_eq!(a.train_text, b.train_text);
        let docs_a: Vec<_> = a.corpus.docs().iter().map(|d| (&d.id, &d.text)).collect();
        let docs_b: Vec<_> = b.corpus.docs().iter().map(|d| (&d.id, &d.text)).collect();
        assert_eq!(docs_a, docs_b);
    }
}

#[test]
fn different_seeds_give_different_text() {
    let base = small_config();
    let other = SyntheticConfig {
        seed: base.seed + 1,
        ..base.clone()
    };
    let a = generate_trial(&base, 0);
    let b = generate_trial(&other, 0);
    assert_ne!(a.example.question, b.example.question);
    assert_ne!(a.train_text, b.train_text);
}

#[test]
fn generated_text_is_lowercase_words_with_single_spaces() {
    let config = small_config();
    for trial in 0..config.trials {
        let data = generate_trial(&config, trial);
        let mut samples: Vec<&str> = vec![&data.example.question, &data.train_text];
        let doc_texts: Vec<&str> = data.corpus.docs().iter().map(|d| d.text.as_str()).collect();
        samples.extend(doc_texts);
        for text in samples {
            assert!(!text.is_empty());
            assert!(!text.starts_with(' ') && !text.ends_with(' '));
            assert!(!text.contains("  "), "double space in {text:?}");
            for word in text.split(' ') {
                assert!(
                    (1..=9).contains(&word.len()),
                    "word {word:?} out of bounds in trial {trial}"
                );
                assert!(word.bytes().all(|b| b.is_ascii_lowercase()));
            }
        }
    }
}

#[test]
fn trial_sizes_respect_the_config() {
    let config = small_config();
    let data = generate_trial(&config, 4);
    assert_eq!(data.corpus.len(), config.sources);
    // Sampling stops at a word boundary at or past the requested length, so
    // allow the final word to overshoot by its maximum length.
    assert!(data.train_text.len() >= config.train_chars);
    assert!(data.train_text.len() < config.train_chars + 16);
    for doc in data.corpus.docs() {
        assert!(doc.text.len() >= config.doc_chars);
        assert!(doc.text.len() < config.doc_chars + 16);
    }
    assert!(data.example.question.len() >= config.query_chars);
    assert!(data.example.question.len() < config.query_chars + 16);
}

#[test]
fn the_questioning_source_rotates_round_robin() {
    let config = small_config();
    for trial in 0..config.trials {
        let data = generate_trial(&config, trial);
        assert_eq!(data.source_index, trial % config.sources);
        assert_eq!(data.trial, trial);
        assert_eq!(
            data.target_doc_id,
            format!("t{}-d{}", trial, data.source_index)
        );
        assert!(data.corpus.get(&data.target_doc_id).is_some());
        assert_eq!(data.example.query_id, format!("t{trial}"));
    }
}

#[test]
fn answers_are_spans_of_the_target_document() {
    let config = small_config();
    for trial in 0..config.trials {
        let data = generate_trial(&config, trial);
        let target = data.corpus.get(&data.target_doc_id).unwrap();
        assert!(!data.example.answers.is_empty());
        for answer in &data.example.answers {
            assert!(
                target.text.contains(answer.as_str()),
                "answer {answer:?} not in target document"
            );
            let words: Vec<&str> = answer.split(' ').collect();
            assert!((2..=3).contains(&words.len()));
            assert!(words
                .iter()
                .any(|w| !matches!(*w, "a" | "an" | "the")));
        }
        assert!(judge(target, &data.example.answers));
    }
}

#[test]
fn each_source_best_explains_its_own_documents() {
    // Cross-entropy matrix over one trial: the model trained on source i's
    // held-out text must assign document i a strictly lower mean NLL than
    // any other document. This separation is what the whole fixture leans
    // on, so it is tested directly rather than only through rerank output.
    let config = SyntheticConfig::default();
    let ngram = NgramConfig {
        order: 3,
        k: 0.5,
        max_context_tokens: 1_000_000,
    };
    let mut trials_checked = 0;
    for trial in 0..config.sources {
        let data = generate_trial(&config, trial);
        let backend = NgramBackend::train(&data.train_text, ngram.clone());
        let target = data.corpus.get(&data.target_doc_id).unwrap();
        let own = mean_nll(&backend, &target.text);
        for doc in data.corpus.docs() {
            if doc.id == data.target_doc_id {
                continue;
            }
            let other = mean_nll(&backend, &doc.text);
            assert!(
                own < other,
                "trial {trial}: own nll {own} not below {other} for {}",
                doc.id
            );
        }
        trials_checked += 1;
    }
    assert_eq!(trials_checked, config.sources);
}

#[test]
fn the_retriever_ordering_is_a_permutation_of_the_pool() {
    let config = small_config();
    for trial in 0..4 {
        let data = generate_trial(&config, trial);
        let pool = bm25_ordering(&data);
        assert_eq!(pool.len(), data.corpus.len());
        let ids: BTreeSet<&str> = pool.iter().map(|c| c.doc_id.as_str()).collect();
        assert_eq!(ids.len(), pool.len(), "duplicate doc id in pool");
        for (i, candidate) in pool.iter().enumerate() {
            assert_eq!(candidate.rank, i + 1);
            assert!(candidate.score.is_finite());
            assert!(data.corpus.get(&candidate.doc_id).is_some());
        }
        // Scores never increase down the list.
        for pair in pool.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
    }
}

#[test]
fn run_trial_reports_hits_against_the_target() {
    let config = small_config();
    let data = generate_trial(&config, 2);
    let outcome = run_trial(&data, 0.25).expect("trial should run");
    assert_eq!(outcome.trial, 2);
    assert_eq!(outcome.source_index, 2);
    let pool = bm25_ordering(&data);
    assert_eq!(outcome.bm25_hit, pool[0].doc_id == data.target_doc_id);
}

#[test]
fn a_small_fixture_run_mostly_finds_the_source_document() {
    let config = small_config();
    let stats = run_fixture(&config).expect("fixture should run");
    assert_eq!(stats.outcomes.len(), config.trials);
    let recount = stats.outcomes.iter().filter(|o| o.ur3_hit).count();
    assert_eq!(stats.ur3_top1, recount);
    let bm25_recount = stats.outcomes.iter().filter(|o| o.bm25_hit).count();
    assert_eq!(stats.bm25_top1, bm25_recount);
    // The full-size guarantee lives in the acceptance suite; this smoke run
    // only requires a clear majority.
    assert!(
        stats.ur3_top1 * 10 >= config.trials * 8,
        "only {} of {} trials hit",
        stats.ur3_top1,
        config.trials
    );
}

#[test]
fn manifest_captures_the_rates_and_round_trips() {
    let config = small_config();
    let stats = run_fixture(&config).expect("fixture should run");
    let manifest = FixtureManifest::from_stats(&config, &stats);
    assert_eq!(manifest.seed, config.seed);
    assert_eq!(manifest.trials, config.trials);
    assert_eq!(manifest.threshold, TOP1_THRESHOLD);
    assert!((manifest.ur3_top1_rate - stats.ur3_top1 as f64 / config.trials as f64).abs() < 1e-12);
    assert!(
        (manifest.bm25_top1_rate - stats.bm25_top1 as f64 / config.trials as f64).abs() < 1e-12
    );
    let json = serde_json::to_string(&manifest).unwrap();
    let back: FixtureManifest = serde_json::from_str(&json).unwrap();
    assert_eq!(back.seed, manifest.seed);
    assert_eq!(back.ur3_top1_rate.to_bits(), manifest.ur3_top1_rate.to_bits());
    assert_eq!(back.threshold.to_bits(), manifest.threshold.to_bits());
}

#[test]
fn defaults_match_the_documented_fixture_shape() {
    let config = SyntheticConfig::default();
    assert_eq!(config.trials, DEFAULT_TRIALS);
    assert_eq!(config.sources, DEFAULT_SOURCES);
    assert_eq!(DEFAULT_TRIALS, 100);
    assert_eq!(DEFAULT_SOURCES, 8);
    assert!(TOP1_THRESHOLD >= 0.9);
}
