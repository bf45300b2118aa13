//! Language-model span scoring behind a backend trait.
//!
//! A [`ScoringRequest`] names labeled character spans of one text; a backend
//! returns, for every span, the per-token natural-log probabilities of the
//! text under the model, each token conditioned on all text before it. Both
//! spans of a scoring prompt are evaluated in the single backend inference
//! over the full text, never in separate calls.
//!
//! Implementations:
//!
//! * [`NgramBackend`], a deterministic byte-level n-gram model with add-k
//!   smoothing, used as the local reference backend in tests and fixtures.
//! * [`HttpBackend`], an OpenAI-compatible completions client using echo-mode
//!   token logprobs, for vLLM and similar inference servers.
//! * [`CachedBackend`], which wraps any backend with a content-addressed
//!   on-disk score cache.

mod align;
mod cache;
mod http;
mod ngram;

pub use align::{align_tokens, assign_to_spans, AlignedToken};
pub use cache::{CacheKey, CachedBackend, ScoreCache};
pub use http::{HttpBackend, HttpBackendConfig};
pub use ngram::{NgramBackend, NgramConfig};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::Range;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

/// One scored token: its text, half-open character offsets into the scored
/// text, and its natural-log probability.
///
/// Within one response the records tile the text: consecutive `char_span`s
/// are contiguous and the concatenated `token_text`s reconstruct the scored
/// string exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreRecord {
    pub token_text: String,
    pub char_span: Range<usize>,
    pub logprob: f64,
}

/// A labeled half-open character range of the request text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub label: String,
    pub range: Range<usize>,
}

impl LabeledSpan {
    pub fn new(label: impl Into<String>, range: Range<usize>) -> Self {
        LabeledSpan {
            label: label.into(),
            range,
        }
    }
}

/// A full text plus the labeled spans to score within it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringRequest {
    pub full_text: String,
    pub spans: Vec<LabeledSpan>,
}

impl ScoringRequest {
    pub fn new(full_text: String, spans: Vec<LabeledSpan>) -> Self {
        ScoringRequest { full_text, spans }
    }

    /// Checks span bounds (character offsets), pairwise disjointness, and
    /// label uniqueness.
    pub fn validate(&self) -> Result<(), BackendError> {
        let n_chars = self.full_text.chars().count();
        let mut sorted: Vec<&LabeledSpan> = self.spans.iter().collect();
        sorted.sort_by_key(|s| s.range.start);
        for pair in sorted.windows(2) {
            if pair[1].range.start < pair[0].range.end {
                return Err(BackendError::InvalidRequest {
                    message: format!(
                        "spans {:?} and {:?} overlap",
                        pair[0].label, pair[1].label
                    ),
                });
            }
        }
        let mut labels: Vec<&str> = self.spans.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.spans.len() {
            return Err(BackendError::InvalidRequest {
                message: "duplicate span labels".into(),
            });
        }
        for span in &self.spans {
            if span.range.start > span.range.end || span.range.end > n_chars {
                return Err(BackendError::InvalidRequest {
                    message: format!(
                        "span {:?} range {}..{} outside text of {} chars",
                        span.label, span.range.start, span.range.end, n_chars
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Per-span token records, keyed by span label.
pub type SpanScores = BTreeMap<String, Vec<TokenScoreRecord>>;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unreachable at {url}: {message}")]
    Unreachable { url: String, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("bad backend response: {message}")]
    Protocol { message: String },
    #[error("token alignment failed: {message}")]
    Alignment { message: String },
    #[error("scoring text exceeds the backend context window: {detail}")]
    ContextOverflow { detail: String },
    #[error("{operation} is not supported by the {backend} backend")]
    Unsupported {
        operation: &'static str,
        backend: &'static str,
    },
    #[error("invalid scoring request: {message}")]
    InvalidRequest { message: String },
    #[error("auth key environment variable {var} is not set")]
    MissingAuth { var: String },
    #[error("invalid backend config: {message}")]
    Config { message: String },
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
}

/// A language model that can score labeled spans of a text and, for HTTP
/// backends, generate completions.
pub trait ScoreBackend: Send + Sync {
    /// Scores every requested span in one inference over `full_text`.
    ///
    /// Returned records carry logprobs conditioned on all preceding text.
    /// Backend tokens that straddle a span boundary belong to the span
    /// containing their first character.
    fn score_spans(&self, request: &ScoringRequest) -> Result<SpanScores, BackendError>;

    /// Greedy completion of `prompt`, truncated at `max_new_tokens` or the
    /// first blank line. Local reference backends do not support this.
    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<String, BackendError>;

    /// Stable identity (kind, model, parameters) used in cache keys.
    fn identity(&self) -> String;
}

impl<T: ScoreBackend + ?Sized> ScoreBackend for &T {
    fn score_spans(&self, request: &ScoringRequest) -> Result<SpanScores, BackendError> {
        (**self).score_spans(request)
    }
    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<String, BackendError> {
        (**self).generate(prompt, max_new_tokens)
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
}

impl<T: ScoreBackend + ?Sized> ScoreBackend for Box<T> {
    fn score_spans(&self, request: &ScoringRequest) -> Result<SpanScores, BackendError> {
        (**self).score_spans(request)
    }
    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<String, BackendError> {
        (**self).generate(prompt, max_new_tokens)
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
}

impl<T: ScoreBackend + ?Sized> ScoreBackend for std::sync::Arc<T> {
    fn score_spans(&self, request: &ScoringRequest) -> Result<SpanScores, BackendError> {
        (**self).score_spans(request)
    }
    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<String, BackendError> {
        (**self).generate(prompt, max_new_tokens)
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
}

/// Delegating wrapper that counts backend calls. Used to verify cache
/// behavior and the one-inference-per-candidate property.
pub struct CountingBackend<B> {
    inner: B,
    score_calls: AtomicU64,
    generate_calls: AtomicU64,
}

impl<B: ScoreBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            score_calls: AtomicU64::new(0),
            generate_calls: AtomicU64::new(0),
        }
    }

    pub fn score_calls(&self) -> u64 {
        self.score_calls.load(Ordering::SeqCst)
    }

    pub fn generate_calls(&self) -> u64 {
        self.generate_calls.load(Ordering::SeqCst)
    }
}

impl<B: ScoreBackend> ScoreBackend for CountingBackend<B> {
    fn score_spans(&self, request: &ScoringRequest) -> Result<SpanScores, BackendError> {
        self.score_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score_spans(request)
    }

    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<String, BackendError> {
        self.generate_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(prompt, max_new_tokens)
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }
}

/// Declarative backend selection, as read from the harness config.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendConfig {
    Ngram {
        order: usize,
        k: f64,
        /// Path to the plain-text training corpus.
        train: PathBuf,
        max_context_tokens: usize,
    },
    Http(HttpBackendConfig),
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |message: String| Err(BackendError::Config { message });
        match self {
            BackendConfig::Ngram {
                order,
                k,
                max_context_tokens,
                ..
            } => {
                if *order == 0 {
                    return bad("ngram order must be at least 1".into());
                }
                if !(*k > 0.0) {
                    return bad(format!("smoothing k must be positive, got {k}"));
                }
                if *max_context_tokens < 16 {
                    return bad(format!(
                        "max_context_tokens must be at least 16, got {max_context_tokens}"
                    ));
                }
            }
            BackendConfig::Http(http) => {
                if http.endpoint.is_empty() {
                    return bad("http backend needs an endpoint".into());
                }
                if http.max_context_tokens < 16 {
                    return bad(format!(
                        "max_context_tokens must be at least 16, got {}",
                        http.max_context_tokens
                    ));
                }
                if http.max_in_flight == 0 {
                    return bad("max_in_flight must be at least 1".into());
                }
            }
        }
        Ok(())
    }

    /// Builds the backend, reading the n-gram training corpus if needed.
    pub fn build(&self) -> Result<Box<dyn ScoreBackend>, BackendError> {
        self.validate()?;
        match self {
            BackendConfig::Ngram {
                order,
                k,
                train,
                max_context_tokens,
            } => {
                let text = std::fs::read_to_string(train).map_err(|e| BackendError::Io {
                    path: train.display().to_string(),
                    message: e.to_string(),
                })?;
                let config = NgramConfig {
                    order: *order,
                    k: *k,
                    max_context_tokens: *max_context_tokens,
                };
                Ok(Box::new(NgramBackend::train(&text, config)))
            }
            BackendConfig::Http(http) => Ok(Box::new(HttpBackend::new(http.clone())?)),
        }
    }

    pub fn max_context_tokens(&self) -> usize {
        match self {
            BackendConfig::Ngram {
                max_context_tokens, ..
            } => *max_context_tokens,
            BackendConfig::Http(http) => http.max_context_tokens,
        }
    }

    /// Character budget for prompt construction. N-gram tokens are single
    /// characters; for HTTP backends a deliberately low three characters per
    /// token keeps truncated prompts inside the server context.
    pub fn prompt_char_budget(&self) -> usize {
        match self {
            BackendConfig::Ngram {
                max_context_tokens, ..
            } => *max_context_tokens,
            BackendConfig::Http(http) => http.max_context_tokens.saturating_mul(3),
        }
    }
}
