//! Alignment of backend-reported tokens onto character offsets.
//!
//! HTTP backends return token strings in order; offsets are derived by
//! walking the scored text and insisting that the concatenated tokens
//! reconstruct it exactly. Anything else is an alignment error, which keeps
//! tokenizer drift loud instead of silently mis-scoring spans.

use super::{BackendError, LabeledSpan, SpanScores, TokenScoreRecord};
use std::ops::Range;

/// A backend token before span assignment. `logprob` is `None` for tokens
/// the backend did not score (echo responses leave the first prompt token
/// unscored).
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedToken {
    pub text: String,
    pub char_span: Range<usize>,
    pub logprob: Option<f64>,
}

/// Tiles `full_text` with `tokens`, deriving half-open character offsets.
pub fn align_tokens(
    full_text: &str,
    tokens: &[String],
    logprobs: &[Option<f64>],
) -> Result<Vec<AlignedToken>, BackendError> {
    if tokens.len() != logprobs.len() {
        return Err(BackendError::Alignment {
            message: format!(
                "{} tokens but {} logprobs",
                tokens.len(),
                logprobs.len()
            ),
        });
    }
    let mut out = Vec::with_capacity(tokens.len());
    let mut byte_cursor = 0;
    let mut char_cursor = 0;
    for (token, &logprob) in tokens.iter().zip(logprobs) {
        if !full_text[byte_cursor..].starts_with(token.as_str()) {
            return Err(BackendError::Alignment {
                message: format!(
                    "token {token:?} does not match the text at character {char_cursor}"
                ),
            });
        }
        let char_len = token.chars().count();
        out.push(AlignedToken {
            text: token.clone(),
            char_span: char_cursor..char_cursor + char_len,
            logprob,
        });
        byte_cursor += token.len();
        char_cursor += char_len;
    }
    if byte_cursor != full_text.len() {
        return Err(BackendError::Alignment {
            message: format!(
                "tokens cover only {char_cursor} of {} characters",
                full_text.chars().count()
            ),
        });
    }
    Ok(out)
}

/// Assigns each token to the span containing its first character (the rule
/// for tokens straddling a span boundary) and drops tokens outside every
/// span. Tokens assigned to a span must carry a logprob.
pub fn assign_to_spans(
    tokens: Vec<AlignedToken>,
    spans: &[LabeledSpan],
) -> Result<SpanScores, BackendError> {
    let mut out: SpanScores = spans
        .iter()
        .map(|s| (s.label.clone(), Vec::new()))
        .collect();
    for token in tokens {
        let Some(span) = spans
            .iter()
            .find(|s| s.range.contains(&token.char_span.start))
        else {
            continue;
        };
        let logprob = token.logprob.ok_or_else(|| BackendError::Protocol {
            message: format!(
                "token {:?} inside span {:?} has no logprob",
                token.text, span.label
            ),
        })?;
        out.get_mut(&span.label).unwrap().push(TokenScoreRecord {
            token_text: token.text,
            char_span: token.char_span,
            logprob,
        });
    }
    Ok(out)
}
