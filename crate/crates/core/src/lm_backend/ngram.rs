//! Byte-level n-gram reference backend with add-k smoothing.
//!
//! The model's alphabet is the set of bytes observed in the training text
//! plus one out-of-alphabet symbol that every unseen byte maps to. With
//! `sigma` the alphabet size including that symbol, the smoothed conditional
//! is
//!
//! ```text
//! p(b | ctx) = (count(ctx.b) + k) / (sum_b' count(ctx.b') + k * sigma)
//! ```
//!
//! where `ctx` is the preceding `order - 1` bytes (shorter at the start of
//! text, and counts over contexts containing unseen bytes are zero). The
//! distribution over the alphabet therefore sums to exactly one for any
//! context.
//!
//! Scoring emits one record per character; a multi-byte character's logprob
//! is the chain-rule sum over its bytes. Everything is deterministic, which
//! is what makes this backend usable as the test reference.

use super::{BackendError, ScoreBackend, ScoringRequest, SpanScores, TokenScoreRecord};
use sha2::{Digest, Sha256};
use std::collections::{BTreeSet, HashMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramConfig {
    /// Model order: conditioning context is `order - 1` bytes.
    pub order: usize,
    /// Add-k smoothing constant.
    pub k: f64,
    /// Scoring requests longer than this many characters are rejected.
    pub max_context_tokens: usize,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig {
            order: 4,
            k: 0.5,
            max_context_tokens: 8192,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NgramBackend {
    config: NgramConfig,
    alphabet: BTreeSet<u8>,
    /// Counts of training substrings of length 1..=order.
    grams: HashMap<Vec<u8>, u64>,
    /// For each context of length 0..=order-1, how often it is followed by
    /// at least one byte (the denominator count).
    ctx_totals: HashMap<Vec<u8>, u64>,
    identity: String,
}

impl NgramBackend {
    /// Trains on raw bytes of `text`.
    ///
    /// Panics if `config.order` is 0 or `config.k` is not positive; use
    /// [`super::BackendConfig::validate`] for user-facing validation.
    pub fn train(text: &str, config: NgramConfig) -> Self {
        Self::train_with_alphabet(text, "", config)
    }

    /// Trains on `text` with extra zero-count alphabet bytes from
    /// `extra_alphabet`. An empty training text with an explicit alphabet
    /// yields the uniform model.
    pub fn train_with_alphabet(text: &str, extra_alphabet: &str, config: NgramConfig) -> Self {
        assert!(config.order >= 1, "ngram order must be at least 1");
        assert!(config.k > 0.0, "smoothing k must be positive");
        let bytes = text.as_bytes();
        let mut alphabet: BTreeSet<u8> = bytes.iter().copied().collect();
        alphabet.extend(extra_alphabet.as_bytes());
        let mut grams: HashMap<Vec<u8>, u64> = HashMap::new();
        let mut ctx_totals: HashMap<Vec<u8>, u64> = HashMap::new();
        for start in 0..bytes.len() {
            for len in 1..=config.order.min(bytes.len() - start) {
                *grams.entry(bytes[start..start + len].to_vec()).or_insert(0) += 1;
            }
            for ctx_len in 0..config.order.min(bytes.len() - start) {
                *ctx_totals
                    .entry(bytes[start..start + ctx_len].to_vec())
                    .or_insert(0) += 1;
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        hasher.update([0u8]);
        hasher.update(extra_alphabet.as_bytes());
        let digest = hasher.finalize();
        let short: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        let identity = format!("ngram:order={}:k={}:train={}", config.order, config.k, short);
        NgramBackend {
            config,
            alphabet,
            grams,
            ctx_totals,
            identity,
        }
    }

    /// Alphabet size including the out-of-alphabet symbol.
    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len() + 1
    }

    /// Observed alphabet bytes in ascending order.
    pub fn alphabet(&self) -> impl Iterator<Item = u8> + '_ {
        self.alphabet.iter().copied()
    }

    /// Smoothed ln p(next | context). `context` may be any byte string; only
    /// its trailing `order - 1` bytes condition the prediction. `None` asks
    /// for the out-of-alphabet symbol; a `Some` byte outside the alphabet is
    /// equivalent.
    pub fn conditional_logprob(&self, context: &[u8], next: Option<u8>) -> f64 {
        let ctx_len = context.len().min(self.config.order - 1);
        let ctx = &context[context.len() - ctx_len..];
        let count = match next {
            Some(b) => {
                let mut gram = ctx.to_vec();
                gram.push(b);
                self.grams.get(&gram).copied().unwrap_or(0)
            }
            None => 0,
        };
        let total = self.ctx_totals.get(ctx).copied().unwrap_or(0);
        let sigma = (self.alphabet.len() + 1) as f64;
        ((count as f64 + self.config.k) / (total as f64 + self.config.k * sigma)).ln()
    }
}

impl ScoreBackend for NgramBackend {
    fn score_spans(&self, request: &ScoringRequest) -> Result<SpanScores, BackendError> {
        request.validate()?;
        let n_chars = request.full_text.chars().count();
        if n_chars > self.config.max_context_tokens {
            return Err(BackendError::ContextOverflow {
                detail: format!(
                    "{n_chars} characters > {} max_context_tokens",
                    self.config.max_context_tokens
                ),
            });
        }
        let bytes = request.full_text.as_bytes();
        let mut out: SpanScores = request
            .spans
            .iter()
            .map(|s| (s.label.clone(), Vec::new()))
            .collect();
        for (char_idx, (byte_idx, ch)) in request.full_text.char_indices().enumerate() {
            let Some(span) = request
                .spans
                .iter()
                .find(|s| s.range.contains(&char_idx))
            else {
                continue;
            };
            let mut logprob = 0.0;
            for offset in 0..ch.len_utf8() {
                let pos = byte_idx + offset;
                logprob += self.conditional_logprob(&bytes[..pos], Some(bytes[pos]));
            }
            out.get_mut(&span.label).unwrap().push(TokenScoreRecord {
                token_text: ch.to_string(),
                char_span: char_idx..char_idx + 1,
                logprob,
            });
        }
        Ok(out)
    }

    fn generate(&self, _prompt: &str, _max_new_tokens: usize) -> Result<String, BackendError> {
        Err(BackendError::Unsupported {
            operation: "generate",
            backend: "ngram",
        })
    }

    fn identity(&self) -> String {
        self.identity.clone()
    }
}
