//! Oracle and property tests for the BM25 index.
//!
//! The reference scorer below recomputes BM25 from raw token lists with no
//! inverted index, no postings, and no shared code beyond the tokenizer, so
//! agreement between the two is meaningful.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, HashSet};
use ur3_core::corpus::{tokenize, Corpus, Document};
use ur3_core::retrieval::{build_index, Bm25Params};

const VOCAB: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa",
];

fn random_corpus(rng: &mut ChaCha8Rng, max_docs: usize) -> Vec<String> {
    let n_docs = rng.gen_range(1..=max_docs);
    (0..n_docs)
        .map(|_| {
            let len = rng.gen_range(1..=14);
            (0..len)
                .map(|_| *VOCAB.choose(rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

fn corpus_of(texts: &[String]) -> Corpus {
    let docs = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Document {
            id: format!("d{i}"),
            title: String::new(),
            text: t.clone(),
        })
        .collect();
    Corpus::from_docs(docs).unwrap()
}

/// Direct BM25 over token lists: same formula, no index structures.
fn reference_scores(texts: &[String], query: &str, params: Bm25Params) -> Vec<f64> {
    let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let query_tokens = tokenize(query);
    docs.iter()
        .map(|doc| {
            let mut score = 0.0;
            for term in &query_tokens {
                let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
                if df == 0.0 {
                    continue;
                }
                let tf = doc.iter().filter(|w| *w == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                let dl = doc.len() as f64;
                let norm = params.k1 * (1.0 - params.b + params.b * dl / avgdl);
                score += idf * tf * (params.k1 + 1.0) / (tf + norm);
            }
            score
        })
        .collect()
}

fn assert_search_matches_reference(texts: &[String], query: &str, params: Bm25Params) {
    let index = build_index(&corpus_of(texts), params);
    let hits = index.search(query, texts.len());

    let scores = reference_scores(texts, query, params);
    let mut expected: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, s)| s > 0.0)
        .collect();
    expected.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    assert_eq!(hits.len(), expected.len(), "query {query:?} over {texts:?}");
    for (hit, (ord, score)) in hits.iter().zip(&expected) {
        assert_eq!(hit.doc_id, format!("d{ord}"));
        let tolerance = 1e-9 * score.abs().max(1.0);
        assert!(
            (hit.score - score).abs() <= tolerance,
            "score mismatch for {:?}: {} vs {}",
            hit.doc_id,
            hit.score,
            score
        );
    }
}

#[test]
fn search_matches_reference_scorer_on_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b25);
    for _ in 0..100 {
        let texts = random_corpus(&mut rng, 12);
        let n_terms = rng.gen_range(1..=4);
        let query = (0..n_terms)
            .map(|_| *VOCAB.choose(&mut rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ");
        assert_search_matches_reference(&texts, &query, Bm25Params::default());
        assert_search_matches_reference(&texts, &query, Bm25Params { k1: 0.6, b: 0.3 });
    }
}

#[test]
fn postings_term_frequencies_match_word_count_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let texts = random_corpus(&mut rng, 1);
    let mut texts = texts;
    while texts.len() < 1000 {
        texts.extend(random_corpus(&mut rng, 8));
    }
    texts.truncate(1000);

    // Oracle: flat word counts over every document, no index involved.
    let mut oracle: HashMap<String, u64> = HashMap::new();
    for text in &texts {
        for token in tokenize(text) {
            *oracle.entry(token).or_insert(0) += 1;
        }
    }

    let index = build_index(&corpus_of(&texts), Bm25Params::default());
    for (term, &count) in &oracle {
        let posted: u64 = index
            .postings(term)
            .unwrap_or(&[])
            .iter()
            .map(|&(_, tf)| tf as u64)
            .sum();
        assert_eq!(posted, count, "term {term:?}");
    }
    // No phantom terms either.
    for term in VOCAB {
        if !oracle.contains_key(*term) {
            assert!(index.postings(term).is_none());
        }
    }
}

/// Adding a document that shares no terms with the query must not leak into
/// other documents' scores except through collection statistics. With b = 0
/// the length normalization is inert, so the only statistic left is the
/// document count N inside idf; scores recomputed from the original corpus
/// statistics with N incremented must match the augmented index bit for bit.
#[test]
fn foreign_document_only_shifts_scores_through_collection_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = Bm25Params { k1: 1.2, b: 0.0 };
    for _ in 0..50 {
        let texts = random_corpus(&mut rng, 8);
        let query = (0..rng.gen_range(1..=3))
            .map(|_| *VOCAB.choose(&mut rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ");
        let query_terms: HashSet<String> = tokenize(&query).into_iter().collect();

        let mut augmented = texts.clone();
        augmented.push("zulu yankee xray whiskey".to_string());

        let index_a = build_index(&corpus_of(&texts), params);
        let index_b = build_index(&corpus_of(&augmented), params);

        // Postings for query terms are untouched by the foreign document.
        for term in &query_terms {
            assert_eq!(index_a.postings(term), index_b.postings(term));
        }

        // Reference with df from the original corpus but N + 1.
        let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
        let n_new = (texts.len() + 1) as f64;
        let hits_b = index_b.search(&query, augmented.len());
        for hit in &hits_b {
            let ord: usize = hit.doc_id[1..].parse().unwrap();
            let doc = &docs[ord];
            let mut expected = 0.0;
            for term in tokenize(&query) {
                let df = docs.iter().filter(|d| d.contains(&term)).count() as f64;
                if df == 0.0 {
                    continue;
                }
                let tf = doc.iter().filter(|w| **w == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = ((n_new - df + 0.5) / (df + 0.5) + 1.0).ln();
                expected += idf * tf * (params.k1 + 1.0) / (tf + params.k1);
            }
            assert_eq!(hit.score, expected, "doc {}", hit.doc_id);
        }
    }
}
