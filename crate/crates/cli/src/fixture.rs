//! The `fixture` command: writes a self-contained synthetic bundle that the
//! rest of the pipeline can run against, together with ground-truth metrics
//! computed here by direct brute force rather than by the metrics module.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;

use ur3_core::corpus::{write_corpus, write_dataset, Corpus, QueryExample};
use ur3_core::retrieval::{build_index, Bm25Params};
use ur3_core::synthetic::{generate_trial, run_fixture, FixtureManifest, SyntheticConfig};

use crate::config::RunConfig;
use crate::manifest::RunManifest;

/// Ground truth for the retrieval stage over the emitted bundle, computed
/// with standalone loops so a pipeline bug cannot hide in both places.
#[derive(Debug, Serialize)]
struct ExpectedMetrics {
    query_count: usize,
    top_k: BTreeMap<usize, f64>,
    ndcg: BTreeMap<usize, f64>,
    map: BTreeMap<usize, f64>,
}

/// Article-free lowercase rendering, mirroring the answer matcher's
/// normalization for the fixture's alphabet (already lowercase, no
/// punctuation).
fn normalize(text: &str) -> String {
    text.split(' ')
        .filter(|w| !w.is_empty() && !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_relevant(doc_text: &str, answers: &[String]) -> bool {
    let doc = normalize(doc_text);
    answers.iter().any(|answer| {
        let needle = normalize(answer);
        !needle.is_empty() && doc.contains(&needle)
    })
}

fn brute_force_metrics(
    corpus: &Corpus,
    examples: &[QueryExample],
    rankings: &BTreeMap<String, Vec<String>>,
) -> ExpectedMetrics {
    let top_cutoffs = [1usize, 5, 20];
    let map_cutoffs = [100usize];
    let n = examples.len() as f64;

    let mut top_k: BTreeMap<usize, f64> = top_cutoffs.iter().map(|&k| (k, 0.0)).collect();
    let mut ndcg: BTreeMap<usize, f64> = top_cutoffs.iter().map(|&k| (k, 0.0)).collect();
    let mut map: BTreeMap<usize, f64> = map_cutoffs.iter().map(|&k| (k, 0.0)).collect();

    for example in examples {
        let empty = Vec::new();
        let ranking = rankings.get(&example.query_id).unwrap_or(&empty);
        let bits: Vec<bool> = ranking
            .iter()
            .map(|doc_id| {
                let doc = corpus.get(doc_id).expect("fixture docs are in the corpus");
                is_relevant(&doc.text, &example.answers)
            })
            .collect();
        let relevant_in_pool = bits.iter().filter(|b| **b).count();

        for &k in &top_cutoffs {
            if bits.iter().take(k).any(|b| *b) {
                *top_k.get_mut(&k).unwrap() += 1.0 / n;
            }
            let mut dcg = 0.0;
            for (i, bit) in bits.iter().take(k).enumerate() {
                if *bit {
                    dcg += 1.0 / ((i + 2) as f64).log2();
                }
            }
            let mut ideal = 0.0;
            for i in 0..relevant_in_pool.min(k) {
                ideal += 1.0 / ((i + 2) as f64).log2();
            }
            if ideal > 0.0 {
                *ndcg.get_mut(&k).unwrap() += dcg / ideal / n;
            }
        }
        for &k in &map_cutoffs {
            let denominator = relevant_in_pool.min(k);
            if denominator == 0 {
                continue;
            }
            let mut hits = 0usize;
            let mut precision_sum = 0.0;
            for (i, bit) in bits.iter().take(k).enumerate() {
                if *bit {
                    hits += 1;
                    precision_sum += hits as f64 / (i + 1) as f64;
                }
            }
            *map.get_mut(&k).unwrap() += precision_sum / denominator as f64 / n;
        }
    }

    ExpectedMetrics {
        query_count: examples.len(),
        top_k,
        ndcg,
        map,
    }
}

pub fn cmd_fixture(config: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&config.out)
        .with_context(|| format!("creating output dir {}", config.out.display()))?;
    let synthetic = SyntheticConfig {
        seed: config.seed,
        trials: config.trials,
        ..SyntheticConfig::default()
    };

    // The demo bundle merges a handful of trials into one corpus. Only the
    // first trial's held-out text is bundled for backend training; it stands
    // for "a sample of the kind of text the questions come from".
    let mut docs = Vec::new();
    let mut examples = Vec::new();
    let mut train_text = String::new();
    for trial in 0..config.fixture_trials.max(1) {
        let data = generate_trial(&synthetic, trial);
        if trial == 0 {
            train_text = data.train_text;
        }
        docs.extend(data.corpus.docs().iter().cloned());
        examples.push(data.example);
    }
    let corpus = Corpus::from_docs(docs)?;

    let corpus_out = config.out.join("corpus.jsonl");
    let queries_out = config.out.join("queries.jsonl");
    let train_out = config.out.join("train.txt");
    write_corpus(&corpus_out, &corpus)?;
    write_dataset(&queries_out, &examples)?;
    fs::write(&train_out, &train_text)?;

    // Ground truth for retrieve -> eval over the bundle, using the same
    // search the retrieve command performs but standalone metric loops.
    let index = build_index(&corpus, Bm25Params::default());
    let rankings: BTreeMap<String, Vec<String>> = examples
        .iter()
        .map(|ex| {
            let ids = index
                .search(&ex.question, config.pool)
                .into_iter()
                .map(|c| c.doc_id)
                .collect();
            (ex.query_id.clone(), ids)
        })
        .collect();
    let expected = brute_force_metrics(&corpus, &examples, &rankings);
    let expected_out = config.out.join("expected_metrics.json");
    fs::write(&expected_out, serde_json::to_string_pretty(&expected)? + "\n")?;

    // Statistics over independent trials, recorded beside the pinned
    // acceptance threshold.
    let stats = run_fixture(&synthetic).context("running fixture trials")?;
    let fixture_manifest = FixtureManifest::from_stats(&synthetic, &stats);
    let manifest_out = config.out.join("manifest.json");
    fs::write(
        &manifest_out,
        serde_json::to_string_pretty(&fixture_manifest)? + "\n",
    )?;

    let written = vec![corpus_out, queries_out, train_out, expected_out, manifest_out];
    let mut manifest = RunManifest::begin("fixture", config.snapshot());
    for path in &written {
        manifest.record_output(path)?;
        println!("wrote {}", path.display());
    }
    manifest.write(&config.out)?;
    Ok(written)
}
