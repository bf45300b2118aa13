//! Synthetic end-to-end fixture: fabricated corpora where the right answer
//! is known by construction.
//!
//! Each trial builds a small corpus in which every document was emitted by
//! its own low-entropy character source, and the question was emitted by
//! exactly one of them. A character model trained on held-out text from the
//! questioning source recognises that source's document by its transition
//! statistics, which is exactly the signal the risk re-ranker consumes. The
//! lexical retriever sees only literal word overlap between a short question
//! and one sample, so it stays fallible and the margin between the two
//! orderings is measurable.
//!
//! Everything is derived from `ChaCha8` streams keyed on (seed, role, trial,
//! source), so any trial can be regenerated in isolation and the whole
//! fixture is reproducible byte for byte.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::corpus::{Corpus, Document, QueryExample};
use crate::lm_backend::{NgramBackend, NgramConfig};
use crate::retrieval::{build_index, Bm25Params, Candidate};
use crate::scoring::{rerank, Method, ScoringError};

pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_SOURCES: usize = 8;

/// Minimum fraction of trials in which the re-ranker must place the
/// question's source document first. Pinned from a pilot run of the default
/// fixture; the observed rate is recorded in [`FixtureManifest`].
pub const TOP1_THRESHOLD: f64 = 0.9;

const MAX_WORD: usize = 9;
const SPACE: usize = 26;
const SYMBOLS: usize = 27;
const BRANCH: usize = 2;

const SALT_SOURCE: u64 = 1;
const SALT_DOC: u64 = 2;
const SALT_QUERY: u64 = 3;
const SALT_TRAIN: u64 = 4;
const SALT_ANSWER: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub trials: usize,
    pub sources: usize,
    /// Approximate document length in characters; sampling runs to the next
    /// word boundary past this.
    pub doc_chars: usize,
    /// Approximate length of the held-out training sample for the backend.
    pub train_chars: usize,
    /// Approximate question length.
    pub query_chars: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 17,
            trials: DEFAULT_TRIALS,
            sources: DEFAULT_SOURCES,
            doc_chars: 400,
            train_chars: 4000,
            query_chars: 24,
        }
    }
}

/// One generated trial: a corpus, the question, and the ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticTrial {
    pub trial: usize,
    /// Index of the source that emitted both the question and the target
    /// document. Rotates round robin over trials.
    pub source_index: usize,
    pub target_doc_id: String,
    pub corpus: Corpus,
    pub example: QueryExample,
    /// Held-out sample from the questioning source, used to train the
    /// character backend for this trial.
    pub train_text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub source_index: usize,
    /// Whether the lexical retriever put the target document first.
    pub bm25_hit: bool,
    /// Whether the risk re-ranker put the target document first.
    pub ur3_hit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureStats {
    pub trials: usize,
    pub ur3_top1: usize,
    pub bm25_top1: usize,
    pub outcomes: Vec<TrialOutcome>,
}

/// Summary written next to generated fixture files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub seed: u64,
    pub trials: usize,
    pub sources: usize,
    pub doc_chars: usize,
    pub train_chars: usize,
    pub query_chars: usize,
    pub ur3_top1_rate: f64,
    pub bm25_top1_rate: f64,
    pub threshold: f64,
}

impl FixtureManifest {
    pub fn from_stats(config: &SyntheticConfig, stats: &FixtureStats) -> Self {
        let trials = stats.trials.max(1) as f64;
        FixtureManifest {
            seed: config.seed,
            trials: stats.trials,
            sources: config.sources,
            doc_chars: config.doc_chars,
            train_chars: config.train_chars,
            query_chars: config.query_chars,
            ur3_top1_rate: stats.ur3_top1 as f64 / trials,
            bm25_top1_rate: stats.bm25_top1 as f64 / trials,
            threshold: TOP1_THRESHOLD,
        }
    }
}

/// A random order-3 character chain over lowercase letters and space.
///
/// Every two-symbol context allows [`BRANCH`] successors chosen once per
/// source, so two sources almost never share transition structure. Word
/// shape is enforced at sampling time: words start with a letter and are
/// broken after [`MAX_WORD`] characters.
struct SourceModel {
    next: Vec<[u8; BRANCH]>,
}

fn derive_rng(seed: u64, salt: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&salt.to_le_bytes());
    bytes[16..24].copy_from_slice(&a.to_le_bytes());
    bytes[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

fn build_source(seed: u64, source: u64) -> SourceModel {
    let mut rng = derive_rng(seed, SALT_SOURCE, source, 0);
    let mut next = Vec::with_capacity(SYMBOLS * SYMBOLS);
    for ctx in 0..SYMBOLS * SYMBOLS {
        let after_space = ctx % SYMBOLS == SPACE;
        let mut entry = [0u8; BRANCH];
        for slot in &mut entry {
            *slot = if !after_space && rng.gen_bool(0.22) {
                SPACE as u8
            } else {
                rng.gen_range(0..SPACE) as u8
            };
        }
        next.push(entry);
    }
    SourceModel { next }
}

impl SourceModel {
    /// Walks the chain until the first word boundary at or past
    /// `min_chars`. Output is lowercase words separated by single spaces.
    fn sample(&self, rng: &mut ChaCha8Rng, min_chars: usize) -> String {
        let mut out: Vec<u8> = Vec::new();
        let mut c1 = SPACE;
        let mut c2 = SPACE;
        let mut word_len = 0usize;
        loop {
            let sym = if word_len >= MAX_WORD {
                SPACE
            } else {
                let options = &self.next[c1 * SYMBOLS + c2];
                let mut s = options[rng.gen_range(0..BRANCH)] as usize;
                if s == SPACE && word_len == 0 {
                    s = rng.gen_range(0..SPACE);
                }
                s
            };
            if sym == SPACE {
                if out.len() >= min_chars {
                    break;
                }
                out.push(b' ');
                word_len = 0;
            } else {
                out.push(b'a' + sym as u8);
                word_len += 1;
            }
            c1 = c2;
            c2 = sym;
        }
        String::from_utf8(out).expect("samples are ascii")
    }
}

fn is_article(word: &str) -> bool {
    matches!(word, "a" | "an" | "the")
}

/// Picks a short word window from the target document to serve as the gold
/// answer. The window always contains a word that survives answer
/// normalization, so containment judging cannot degenerate.
fn pick_answer(text: &str, rng: &mut ChaCha8Rng) -> String {
    let words: Vec<&str> = text.split(' ').collect();
    let len = if words.len() >= 3 && rng.gen_bool(0.5) {
        3
    } else {
        2.min(words.len())
    };
    for _ in 0..64 {
        let start = rng.gen_range(0..=words.len() - len);
        let window = &words[start..start + len];
        if window.iter().any(|w| !is_article(w)) {
            return window.join(" ");
        }
    }
    for start in 0..=words.len() - len {
        let window = &words[start..start + len];
        if window.iter().any(|w| !is_article(w)) {
            return window.join(" ");
        }
    }
    words[..len].join(" ")
}

pub fn generate_trial(config: &SyntheticConfig, trial: usize) -> SyntheticTrial {
    let t = trial as u64;
    let source_index = trial % config.sources;
    let models: Vec<SourceModel> = (0..config.sources)
        .map(|s| build_source(config.seed, s as u64))
        .collect();

    let mut docs = Vec::with_capacity(config.sources);
    for (s, model) in models.iter().enumerate() {
        let mut rng = derive_rng(config.seed, SALT_DOC, t, s as u64);
        docs.push(Document {
            id: format!("t{trial}-d{s}"),
            title: String::new(),
            text: model.sample(&mut rng, config.doc_chars),
        });
    }
    let corpus = Corpus::from_docs(docs).expect("generated ids are unique");
    let target_doc_id = format!("t{trial}-d{source_index}");

    let questioner = &models[source_index];
    let question = questioner.sample(
        &mut derive_rng(config.seed, SALT_QUERY, t, source_index as u64),
        config.query_chars,
    );
    let train_text = questioner.sample(
        &mut derive_rng(config.seed, SALT_TRAIN, t, source_index as u64),
        config.train_chars,
    );

    let target_text = &corpus.get(&target_doc_id).expect("target exists").text;
    let answer = pick_answer(target_text, &mut derive_rng(config.seed, SALT_ANSWER, t, 0));
    let example = QueryExample {
        query_id: format!("t{trial}"),
        question,
        answers: vec![answer],
    };

    SyntheticTrial {
        trial,
        source_index,
        target_doc_id,
        corpus,
        example,
        train_text,
    }
}

/// The lexical baseline ordering for one trial: a BM25 search over the whole
/// trial corpus, with unmatched documents appended in corpus order at score
/// zero so the pool always covers every document.
pub fn bm25_ordering(trial: &SyntheticTrial) -> Vec<Candidate> {
    let index = build_index(&trial.corpus, Bm25Params::default());
    let mut pool = index.search(&trial.example.question, trial.corpus.len());
    let seen: BTreeSet<&str> = pool.iter().map(|c| c.doc_id.as_str()).collect();
    let missing: Vec<String> = trial
        .corpus
        .docs()
        .iter()
        .filter(|d| !seen.contains(d.id.as_str()))
        .map(|d| d.id.clone())
        .collect();
    for doc_id in missing {
        pool.push(Candidate {
            doc_id,
            rank: pool.len() + 1,
            score: 0.0,
        });
    }
    pool
}

fn trial_backend(train_text: &str) -> NgramBackend {
    NgramBackend::train(
        train_text,
        NgramConfig {
            order: 3,
            k: 0.5,
            max_context_tokens: 8192,
        },
    )
}

pub fn run_trial(data: &SyntheticTrial, alpha: f64) -> Result<TrialOutcome, ScoringError> {
    let pool = bm25_ordering(data);
    let bm25_hit = pool[0].doc_id == data.target_doc_id;
    let backend = trial_backend(&data.train_text);
    let reranked = rerank(
        &backend,
        &data.corpus,
        &data.example.query_id,
        &data.example.question,
        &pool,
        Method::Ur3,
        alpha,
        8192,
    )?;
    let ur3_hit = reranked.entries[0].doc_id == data.target_doc_id;
    Ok(TrialOutcome {
        trial: data.trial,
        source_index: data.source_index,
        bm25_hit,
        ur3_hit,
    })
}

/// Generates and scores every trial. Outcomes come back in trial order.
pub fn run_fixture(config: &SyntheticConfig) -> Result<FixtureStats, ScoringError> {
    let outcomes: Vec<TrialOutcome> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let data = generate_trial(config, trial);
            run_trial(&data, crate::scoring::DEFAULT_ALPHA)
        })
        .collect::<Result<_, _>>()?;
    let ur3_top1 = outcomes.iter().filter(|o| o.ur3_hit).count();
    let bm25_top1 = outcomes.iter().filter(|o| o.bm25_hit).count();
    Ok(FixtureStats {
        trials: config.trials,
        ur3_top1,
        bm25_top1,
        outcomes,
    })
}
