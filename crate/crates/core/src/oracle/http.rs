use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::topk::{align_topk, default_floor, observed_mask, TopKEntry, TopKLogprobs};
use super::{Oracle, OracleResponse};
use crate::data::Example;
use crate::error::{Error, Result};

/// Body of `POST /v1/logits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub features: Vec<f64>,
    pub top_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireEntry {
    pub token_id: usize,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub model_id: String,
    pub entries: Vec<WireEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

/// Client for a remote model exposing top-k logprobs over HTTP.
///
/// 429 maps to `BudgetExceeded`; 5xx and transport failures are retried with
/// doubling backoff and then surface as `OracleUnavailable`.
pub struct HttpOracle {
    endpoint: String,
    vocab: usize,
    top_k: usize,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpOracle {
    /// `base_url` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base_url: &str, vocab: usize, top_k: usize) -> Result<Self> {
        if top_k == 0 || top_k > vocab {
            return Err(Error::KOutOfRange { k: top_k, vocab });
        }
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Ok(Self {
            endpoint: format!("{}/v1/logits", base_url.trim_end_matches('/')),
            vocab,
            top_k,
            retry: RetryPolicy::default(),
            agent,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn request_once(&self, body: &WireRequest) -> std::result::Result<WireResponse, Attempt> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => resp
                .body_mut()
                .read_json::<WireResponse>()
                .map_err(|e| Attempt::Fatal(Error::OracleUnavailable(format!("bad response body: {e}")))),
            429 => Err(Attempt::Fatal(Error::BudgetExceeded(format!(
                "{} returned 429",
                self.endpoint
            )))),
            500..=599 => Err(Attempt::Retry(format!("status {status}"))),
            _ => Err(Attempt::Fatal(Error::OracleUnavailable(format!("status {status}")))),
        }
    }
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl Oracle for HttpOracle {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn model_id(&self) -> &str {
        &self.endpoint
    }

    fn evaluate(&self, example: &Example) -> Result<OracleResponse> {
        let body = WireRequest {
            id: example.id.clone(),
            prompt: None,
            features: example.embedding.0.clone(),
            top_k: self.top_k,
        };
        let mut delay = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                thread::sleep(delay);
                delay *= 2;
            }
            match self.request_once(&body) {
                Ok(resp) => {
                    let sparse = TopKLogprobs::new(
                        resp.entries
                            .iter()
                            .map(|e| TopKEntry {
                                token_id: e.token_id,
                                logprob: e.logprob,
                            })
                            .collect(),
                    )
                    .map_err(|e| Error::OracleUnavailable(format!("malformed top-k from {}: {e}", resp.model_id)))?;
                    let logits = align_topk(&sparse, self.vocab, default_floor(&sparse))?;
                    return Ok(OracleResponse {
                        logits,
                        observed: Some(observed_mask(&sparse, self.vocab)),
                    });
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!(
                        "oracle request for {:?} failed ({msg}), attempt {}",
                        example.id,
                        attempt + 1
                    );
                    last = msg;
                }
            }
        }
        Err(Error::OracleUnavailable(format!(
            "{} after {} attempts: {last}",
            self.endpoint, self.retry.attempts
        )))
    }
}
