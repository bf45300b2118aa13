//! OpenAI-compatible completions backend.
//!
//! Span scoring uses echo-mode: the request asks for zero new tokens with
//! `echo: true` and `logprobs`, so the response carries per-token logprobs
//! for the prompt itself and both spans come back from one inference. This
//! dialect is spoken by vLLM and most self-hosted completion servers.
//!
//! Requests are issued with temperature 0. A configurable bound limits
//! in-flight requests; an auth key is read at call time from the environment
//! variable named in the config, if any.

use super::align::{align_tokens, assign_to_spans};
use super::{BackendError, ScoreBackend, ScoringRequest, SpanScores};
use serde::{Deserialize, Serialize};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpBackendConfig {
    /// Full completions URL, e.g. `http://localhost:8000/v1/completions`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub max_context_tokens: usize,
    pub timeout_secs: u64,
    /// Upper bound on concurrent in-flight requests.
    pub max_in_flight: usize,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: None,
            max_context_tokens: 2048,
            timeout_secs: 120,
            max_in_flight: 4,
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    echo: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<Vec<&'a str>>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<LogprobBlock>,
}

#[derive(Deserialize)]
struct LogprobBlock {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Deserialize)]
struct ErrorDetail {
    message: String,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config {
                message: format!("failed to build HTTP client: {e}"),
            })?;
        let gate = Gate::new(config.max_in_flight.max(1));
        Ok(HttpBackend {
            config,
            client,
            gate,
        })
    }

    fn auth_header(&self) -> Result<Option<String>, BackendError> {
        match &self.config.api_key_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(key) => Ok(Some(format!("Bearer {key}"))),
                Err(_) => Err(BackendError::MissingAuth { var: var.clone() }),
            },
        }
    }

    fn post(&self, body: &CompletionRequest) -> Result<String, BackendError> {
        let auth = self.auth_header()?;
        let _permit = self.gate.acquire();
        let mut request = self
            .client
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json")
            .json(body);
        if let Some(auth) = auth {
            request = request.header("Authorization", auth);
        }
        let response = request.send().map_err(|e| BackendError::Unreachable {
            url: self.config.endpoint.clone(),
            message: e.to_string(),
        })?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| BackendError::Unreachable {
            url: self.config.endpoint.clone(),
            message: e.to_string(),
        })?;
        if status == 200 {
            return Ok(text);
        }
        let message = serde_json::from_str::<ErrorBody>(&text)
            .map(|e| e.error.message)
            .unwrap_or_else(|_| truncate_body(&text));
        if looks_like_overflow(&message) {
            return Err(BackendError::ContextOverflow { detail: message });
        }
        Err(BackendError::Http {
            status,
            body: message,
        })
    }
}

fn truncate_body(body: &str) -> String {
    const LIMIT: usize = 400;
    if body.len() <= LIMIT {
        body.to_string()
    } else {
        let cut = body
            .char_indices()
            .take_while(|&(i, _)| i < LIMIT)
            .last()
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(0);
        format!("{}...", &body[..cut])
    }
}

fn looks_like_overflow(message: &str) -> bool {
    let lower = message.to_lowercase();
    lower.contains("context length") ||
        lower.contains("context window") ||
        lower.contains("maximum context") ||
        lower.contains("max_context")
}

/// Parses an echo-mode scoring response into span scores.
pub(crate) fn parse_score_body(
    body: &str,
    request: &ScoringRequest,
) -> Result<SpanScores, BackendError> {
    let parsed: CompletionResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Protocol {
            message: format!("unparseable completion response: {e}"),
        })?;
    let choice = parsed.choices.into_iter().next().ok_or(BackendError::Protocol {
        message: "response has no choices".into(),
    })?;
    let block = choice.logprobs.ok_or(BackendError::Protocol {
        message: "response has no logprobs (echo scoring unsupported by server?)".into(),
    })?;
    let aligned = align_tokens(&request.full_text, &block.tokens, &block.token_logprobs)?;
    assign_to_spans(aligned, &request.spans)
}

/// Parses a generation response and truncates at the first blank line.
pub(crate) fn parse_generate_body(body: &str) -> Result<String, BackendError> {
    let parsed: CompletionResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Protocol {
            message: format!("unparseable completion response: {e}"),
        })?;
    let choice = parsed.choices.into_iter().next().ok_or(BackendError::Protocol {
        message: "response has no choices".into(),
    })?;
    let text = choice.text;
    Ok(text.split("\n\n").next().unwrap_or("").to_string())
}

impl ScoreBackend for HttpBackend {
    fn score_spans(&self, request: &ScoringRequest) -> Result<SpanScores, BackendError> {
        request.validate()?;
        let body = CompletionRequest {
            model: &self.config.model,
            prompt: &request.full_text,
            max_tokens: 0,
            temperature: 0.0,
            logprobs: Some(0),
            echo: true,
            stop: None,
        };
        let response = self.post(&body)?;
        parse_score_body(&response, request)
    }

    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<String, BackendError> {
        let body = CompletionRequest {
            model: &self.config.model,
            prompt,
            max_tokens: max_new_tokens,
            temperature: 0.0,
            logprobs: None,
            echo: false,
            stop: Some(vec!["\n\n"]),
        };
        let response = self.post(&body)?;
        parse_generate_body(&response)
    }

    fn identity(&self) -> String {
        format!("http:model={}", self.config.model)
    }
}

/// Minimal counting semaphore for the in-flight bound.
struct Gate {
    permits: Mutex<usize>,
    available: Condvar,
}

struct Permit<'a> {
    gate: &'a Gate,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Gate {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        Permit { gate: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut permits = self.gate.permits.lock().unwrap();
        *permits += 1;
        self.gate.available.notify_one();
    }
}
