//! Text-completion client with per-token log-probabilities.
//!
//! [`Client`] owns retry policy and response validation; the transport is a
//! [`Backend`]. Two backends ship here: [`HttpBackend`] for any endpoint that
//! speaks the JSON protocol below, and [`MockBackend`], a deterministic rule
//! engine used by tests and offline pipeline runs.
//!
//! Wire protocol:
//!
//! ```text
//! POST <url>  {"prompt": str, "max_new_tokens": int, "logprobs": bool}
//! 200         {"text": str, "model_id": str, "tokens": [{"text": str, "logprob": float}]}
//! ```
//!
//! Requests carry no sampling parameters, so the endpoint's deterministic
//! (greedy) mode applies.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::TokenLogProb;
use crate::metrics::normalize_answer;
use crate::serialize::parse_prompt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub prompt: String,
    pub max_new_tokens: usize,
    #[serde(rename = "logprobs")]
    pub want_logprobs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResponse {
    pub text: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<TokenLogProb>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("endpoint unreachable after {attempts} attempt(s): {message}")]
    Unreachable { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Protocol { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid response: {0}")]
    Validation(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ClientError::Timeout { .. } | ClientError::Unreachable { .. }
        )
    }

    fn with_attempts(self, n: u32) -> Self {
        match self {
            ClientError::Timeout { .. } => ClientError::Timeout { attempts: n },
            ClientError::Unreachable { message, .. } => ClientError::Unreachable {
                attempts: n,
                message,
            },
            other => other,
        }
    }
}

pub type ClientResult<T> = std::result::Result<T, ClientError>;

/// Transport for one completion. Implementations report transient failures
/// as [`ClientError::Timeout`] or [`ClientError::Unreachable`].
pub trait Backend: Send + Sync {
    fn complete(&self, req: &InferenceRequest) -> ClientResult<InferenceResponse>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Extra attempts after the first.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Seeds the backoff jitter.
    pub seed: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 200,
            max_delay_ms: 5_000,
            seed: 0,
        }
    }
}

pub struct Client {
    backend: Box<dyn Backend>,
    retry: RetryPolicy,
    jitter: Mutex<ChaCha8Rng>,
}

impl Client {
    pub fn new(backend: impl Backend + 'static, retry: RetryPolicy) -> Self {
        let jitter = Mutex::new(ChaCha8Rng::seed_from_u64(retry.seed));
        Self {
            backend: Box::new(backend),
            retry,
            jitter,
        }
    }

    // Full jitter: uniform in [0, min(max, base * 2^attempt)].
    fn backoff(&self, attempt: u32) -> Duration {
        let cap = self
            .retry
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.retry.max_delay_ms);
        let ms = if cap == 0 {
            0
        } else {
            self.jitter.lock().expect("jitter lock").gen_range(0..=cap)
        };
        Duration::from_millis(ms)
    }

    pub fn predict(&self, req: &InferenceRequest) -> ClientResult<InferenceResponse> {
        if req.max_new_tokens == 0 {
            return Err(ClientError::InvalidRequest(
                "max_new_tokens must be >= 1".into(),
            ));
        }
        if req.prompt.is_empty() {
            return Err(ClientError::InvalidRequest(
                "prompt must not be empty".into(),
            ));
        }
        let mut attempt = 0u32;
        loop {
            match self.backend.complete(req) {
                Ok(resp) => return validate_response(req, resp),
                Err(e) if e.is_retryable() && attempt < self.retry.max_retries => {
                    log::debug!("attempt {} failed ({e}), retrying", attempt + 1);
                    thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e.with_attempts(attempt + 1)),
            }
        }
    }

    /// Runs `reqs` with at most `max_in_flight` outstanding at once. The
    /// output is index-aligned with `reqs`; failures stay in place.
    pub fn predict_batch(
        &self,
        reqs: &[InferenceRequest],
        max_in_flight: usize,
    ) -> Vec<ClientResult<InferenceResponse>> {
        let workers = max_in_flight.max(1).min(reqs.len());
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<ClientResult<InferenceResponse>>>> =
            reqs.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(req) = reqs.get(i) else { break };
                    let out = self.predict(req);
                    *slots[i].lock().expect("slot lock") = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| {
                m.into_inner()
                    .expect("slot lock")
                    .expect("every slot filled")
            })
            .collect()
    }
}

fn validate_response(
    req: &InferenceRequest,
    resp: InferenceResponse,
) -> ClientResult<InferenceResponse> {
    match (&resp.tokens, req.want_logprobs) {
        (None, true) => {
            return Err(ClientError::Validation(
                "logprobs requested but absent".into(),
            ))
        }
        (Some(tokens), _) => {
            if let Some(t) = tokens.iter().find(|t| t.validate().is_err()) {
                return Err(ClientError::Validation(format!(
                    "token {:?} has logprob {}",
                    t.token_text, t.logprob
                )));
            }
            let joined: String = tokens.iter().map(|t| t.token_text.as_str()).collect();
            if joined != resp.text && joined.trim() != resp.text.trim() {
                return Err(ClientError::Validation(format!(
                    "tokens spell {joined:?}, text is {:?}",
                    resp.text
                )));
            }
        }
        (None, false) => {}
    }
    Ok(resp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "EndpointConfig::default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "EndpointConfig::default_retries")]
    pub retries: u32,
}

impl EndpointConfig {
    fn default_timeout_ms() -> u64 {
        30_000
    }

    fn default_retries() -> u32 {
        3
    }
}

pub struct HttpBackend {
    url: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            url: url.into(),
            agent: config.into(),
        }
    }

    pub fn from_config(cfg: &EndpointConfig) -> Self {
        Self::new(cfg.url.clone(), Duration::from_millis(cfg.timeout_ms))
    }
}

fn transport_error(e: ureq::Error) -> ClientError {
    match e {
        ureq::Error::Timeout(_) => ClientError::Timeout { attempts: 1 },
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => {
            ClientError::Timeout { attempts: 1 }
        }
        ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            ClientError::Unreachable {
                attempts: 1,
                message: e.to_string(),
            }
        }
        other => ClientError::Malformed(other.to_string()),
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &InferenceRequest) -> ClientResult<InferenceResponse> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(req)
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(ClientError::Protocol { status, body });
        }
        serde_json::from_str(&body).map_err(|e| ClientError::Malformed(e.to_string()))
    }
}

/// What the mock answers for a prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum MockRule {
    /// Reply with the last word of the context.
    EchoLastContextWord,
    /// Always reply with the same text.
    Constant(String),
    /// Look the question up in an answer key and reply with the first gold
    /// answer whose words occur contiguously in the context; otherwise
    /// reply [`MockBackend::FALLBACK`].
    GoldIfContiguous(HashMap<String, Vec<String>>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MockLogprobs {
    /// Every token gets this log-probability.
    Fixed(f64),
    /// Pseudo-random per token, keyed by (seed, prompt, position): confident
    /// in `[-0.5, 0]` when the rule found an answer, `[-3, -1]` otherwise.
    Seeded,
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    pub rule: MockRule,
    pub logprobs: MockLogprobs,
    pub seed: u64,
    pub model_id: String,
}

impl MockBackend {
    pub const FALLBACK: &'static str = "unanswerable";

    pub fn new(rule: MockRule, logprobs: MockLogprobs, seed: u64) -> Self {
        Self {
            rule,
            logprobs,
            seed,
            model_id: "mock".to_string(),
        }
    }

    /// Returns the answer and whether the rule found one.
    fn answer(&self, prompt: &str) -> (String, bool) {
        let (context, question) = parse_prompt(prompt).unwrap_or((prompt, ""));
        match &self.rule {
            MockRule::EchoLastContextWord => match context.split_whitespace().last() {
                Some(w) => (w.to_string(), true),
                None => (Self::FALLBACK.to_string(), false),
            },
            MockRule::Constant(text) => (text.clone(), true),
            MockRule::GoldIfContiguous(key) => {
                let ctx: Vec<String> = normalize_answer(context)
                    .split(' ')
                    .map(str::to_string)
                    .collect();
                key.get(question)
                    .and_then(|golds| {
                        golds.iter().find(|g| {
                            let words: Vec<String> =
                                normalize_answer(g).split(' ').map(str::to_string).collect();
                            !words[0].is_empty()
                                && ctx.windows(words.len()).any(|w| w == words.as_slice())
                        })
                    })
                    .map(|g| (g.clone(), true))
                    .unwrap_or_else(|| (Self::FALLBACK.to_string(), false))
            }
        }
    }
}

// FNV-1a; stable across platforms and releases, unlike std's hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

impl Backend for MockBackend {
    fn complete(&self, req: &InferenceRequest) -> ClientResult<InferenceResponse> {
        let (answer, found) = self.answer(&req.prompt);
        let words: Vec<&str> = answer.split_whitespace().take(req.max_new_tokens).collect();
        let text = words.join(" ");
        let tokens = req.want_logprobs.then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(req.prompt.as_bytes()));
            words
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let logprob = match self.logprobs {
                        MockLogprobs::Fixed(lp) => lp,
                        MockLogprobs::Seeded if found => rng.gen_range(-0.5..=0.0),
                        MockLogprobs::Seeded => rng.gen_range(-3.0..=-1.0),
                    };
                    TokenLogProb {
                        token_text: if i == 0 {
                            w.to_string()
                        } else {
                            format!(" {w}")
                        },
                        logprob,
                    }
                })
                .collect()
        });
        Ok(InferenceResponse {
            text,
            model_id: self.model_id.clone(),
            tokens,
        })
    }
}
