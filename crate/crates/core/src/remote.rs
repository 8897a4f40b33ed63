//! HTTP/JSON clients for out-of-process encoder, evaluator and generator services.
//!
//! Endpoints (relative to a base URL):
//!
//! - `GET  /info`     -> [`WireInfo`]
//! - `POST /encode`   [`WireEncodeRequest`] -> [`WireEncodeResponse`]
//! - `POST /evaluate` [`WireEvaluateRequest`] -> [`WireEvaluateResponse`]
//! - `POST /generate` [`WireGenerateRequest`] -> [`WireGenerateResponse`]

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::embedding::{Encoder, EncoderDescriptor};
use crate::error::{Error, Result};
use crate::gate::{EvalItem, Evaluator, EvaluatorDescriptor};
use crate::generator::Generator;
use crate::types::DialogueHistory;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
/// Largest batch sent in one request; matches the sidecar's default limit.
pub const DEFAULT_MAX_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEncodeRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEncodeResponse {
    pub model_id: String,
    pub dim: usize,
    pub embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEvaluateItem {
    pub history: Vec<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEvaluateRequest {
    pub items: Vec<WireEvaluateItem>,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEvaluateResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireInfo {
    pub model_id: String,
    pub dim: usize,
    pub evaluator_id: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireGenerateRequest {
    pub history: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireGenerateResponse {
    pub response: String,
}

#[derive(Debug, Clone)]
struct HttpClient {
    agent: ureq::Agent,
    base: String,
}

impl HttpClient {
    fn new(base_url: &str, timeout: Duration) -> Self {
        HttpClient {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            base: base_url.trim_end_matches('/').to_owned(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    /// Transport and status failures are reported as a string for the caller to wrap.
    fn get<T: DeserializeOwned>(&self, path: &str) -> std::result::Result<T, String> {
        let resp = self.agent.get(&self.url(path)).call().map_err(describe)?;
        resp.into_json().map_err(|e| format!("bad response body: {e}"))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> std::result::Result<T, String> {
        let resp = self.agent.post(&self.url(path)).send_json(body).map_err(describe)?;
        resp.into_json().map_err(|e| format!("bad response body: {e}"))
    }
}

fn describe(e: ureq::Error) -> String {
    match e {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            format!("HTTP {code}: {}", body.trim())
        }
        ureq::Error::Transport(t) => t.to_string(),
    }
}

/// Fetches `/info` from a model service.
pub fn fetch_info(base_url: &str, timeout: Duration) -> Result<WireInfo> {
    HttpClient::new(base_url, timeout)
        .get("/info")
        .map_err(Error::EncoderUnavailable)
}

/// Encoder backed by a remote `/encode` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEncoder {
    client: HttpClient,
    descriptor: EncoderDescriptor,
    max_batch: usize,
}

impl RemoteEncoder {
    /// Reads `/info` to learn the model id and dimension.
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self> {
        let client = HttpClient::new(base_url, timeout);
        let info: WireInfo = client.get("/info").map_err(Error::EncoderUnavailable)?;
        Ok(RemoteEncoder {
            client,
            descriptor: EncoderDescriptor::new(info.model_id, info.dim)?,
            max_batch: DEFAULT_MAX_BATCH,
        })
    }

    /// Like `connect`, but refuses a service whose dimension differs from `expected_dim`.
    pub fn connect_expecting_dim(base_url: &str, timeout: Duration, expected_dim: usize) -> Result<Self> {
        let enc = Self::connect(base_url, timeout)?;
        if enc.descriptor.dim() != expected_dim {
            return Err(Error::DimensionMismatch {
                expected: expected_dim,
                actual: enc.descriptor.dim(),
            });
        }
        Ok(enc)
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }
}

impl Encoder for RemoteEncoder {
    fn descriptor(&self) -> &EncoderDescriptor {
        &self.descriptor
    }

    fn encode_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.max_batch) {
            let req = WireEncodeRequest {
                texts: chunk.iter().map(|t| (*t).to_owned()).collect(),
            };
            let resp: WireEncodeResponse = self.client.post("/encode", &req).map_err(Error::EncoderUnavailable)?;
            if resp.dim != self.descriptor.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.descriptor.dim(),
                    actual: resp.dim,
                });
            }
            if resp.embeddings.len() != chunk.len() {
                return Err(Error::EncoderUnavailable(format!(
                    "service returned {} embeddings for {} texts",
                    resp.embeddings.len(),
                    chunk.len()
                )));
            }
            out.extend(resp.embeddings);
        }
        Ok(out)
    }
}

/// Evaluator backed by a remote `/evaluate` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEvaluator {
    client: HttpClient,
    descriptor: EvaluatorDescriptor,
    max_batch: usize,
}

impl RemoteEvaluator {
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self> {
        let client = HttpClient::new(base_url, timeout);
        let info: WireInfo = client.get("/info").map_err(Error::EvaluatorUnavailable)?;
        Ok(RemoteEvaluator {
            client,
            descriptor: EvaluatorDescriptor::with_question(info.evaluator_id, info.question)?,
            max_batch: DEFAULT_MAX_BATCH,
        })
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }
}

impl Evaluator for RemoteEvaluator {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        &self.descriptor
    }

    fn score_batch(&self, items: &[EvalItem<'_>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.max_batch) {
            let req = WireEvaluateRequest {
                items: chunk
                    .iter()
                    .map(|i| WireEvaluateItem {
                        history: i.history.texts().map(str::to_owned).collect(),
                        response: i.response.to_owned(),
                    })
                    .collect(),
                question: self.descriptor.question().to_owned(),
            };
            let resp: WireEvaluateResponse = self
                .client
                .post("/evaluate", &req)
                .map_err(Error::EvaluatorUnavailable)?;
            if resp.scores.len() != chunk.len() {
                return Err(Error::EvaluatorUnavailable(format!(
                    "service returned {} scores for {} items",
                    resp.scores.len(),
                    chunk.len()
                )));
            }
            out.extend(resp.scores);
        }
        Ok(out)
    }
}

/// Generator backed by a remote `/generate` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    client: HttpClient,
    id: String,
}

impl RemoteGenerator {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        RemoteGenerator {
            client: HttpClient::new(base_url, timeout),
            id: format!("remote[{base_url}]"),
        }
    }
}

impl Generator for RemoteGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, history: &DialogueHistory) -> Result<String> {
        let req = WireGenerateRequest {
            history: history.texts().map(str::to_owned).collect(),
        };
        let resp: WireGenerateResponse = self.client.post("/generate", &req).map_err(Error::GeneratorFailure)?;
        Ok(resp.response)
    }
}
