//! Retrieval and re-ranking toolkit built around generation-likelihood risk
//! scoring.
//!
//! The crate is organized as a pipeline:
//!
//! * [`corpus`] loads JSONL document collections and question/answer datasets
//!   and owns the shared tokenizer and answer normalizer.
//! * [`retrieval`] builds an Okapi BM25 inverted index and reads/writes
//!   TREC-format run files.
//! * [`lm_backend`] scores labeled character spans of a text under a language
//!   model. Backends: a deterministic character n-gram reference model and an
//!   OpenAI-compatible HTTP completions client, both behind one trait, with a
//!   content-addressed score cache.
//! * [`scoring`] renders the question-generation prompt, turns span logprobs
//!   into risk values (query NLL plus alpha times document NLL), and re-ranks
//!   retrieved candidates by ascending risk. Also provides the linear
//!   interpolation baseline against retriever scores.
//! * [`metrics`] computes Top-K accuracy, nDCG@K, MAP@K, and answer EM/F1.
//! * [`analysis`] produces rank-distribution, rank-shift, Top-1 calibration,
//!   alpha-sweep, and timing reports as CSV tables.
//! * [`synthetic`] generates the seeded n-gram fixture used by the end-to-end
//!   tests and example runs.

pub mod analysis;
pub mod corpus;
pub mod lm_backend;
pub mod metrics;
pub mod retrieval;
pub mod scoring;
pub mod synthetic;
