//! Provider and embedder clients.
//!
//! Wire contract for providers: `POST {endpoint}/generate` with
//! `{"prompt": text, "count": n}`, answered by `{"items": [{"image_ref": ..}]}`.
//! Embedders: `POST {endpoint}/embed` with `{"image_ref": ..}`, answered by
//! `{"embedding": [..]}`.

use std::collections::HashMap;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ProcurementError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderItem {
    pub image_ref: String,
}

pub trait ImageProvider: Send + Sync {
    fn generate(&self, prompt: &str, count: usize) -> Result<Vec<ProviderItem>, ProcurementError>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, image_ref: &str) -> Result<Vec<f32>, ProcurementError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub total_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
            total_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    prompt: &'a str,
    count: usize,
}

#[derive(Deserialize)]
struct GenerateResponse {
    items: Vec<ProviderItem>,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    image_ref: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f32>,
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

/// POSTs `body` as JSON and decodes the reply, retrying transport errors,
/// timeouts and 5xx responses with exponential backoff.
fn post_json<B: Serialize, R: DeserializeOwned>(url: &str, body: &B, retry: &RetryPolicy) -> Result<R, String> {
    let start = Instant::now();
    let mut backoff = retry.initial_backoff;
    let mut last = String::from("no attempt made");
    for attempt in 1..=retry.attempts.max(1) {
        let remaining = retry.total_timeout.saturating_sub(start.elapsed());
        if remaining.is_zero() {
            last = format!("total timeout of {:?} exceeded", retry.total_timeout);
            break;
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(remaining))
            .http_status_as_error(false)
            .build()
            .into();
        let outcome = match agent.post(url).send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                match resp.body_mut().read_to_string() {
                    Ok(text) if status >= 500 => Failure::Retryable(format!("status {status}: {text}")),
                    Ok(text) if status >= 400 => Failure::Fatal(format!("status {status}: {text}")),
                    Ok(text) => match serde_json::from_str::<R>(&text) {
                        Ok(parsed) => return Ok(parsed),
                        Err(e) => Failure::Fatal(format!("malformed payload: {e}")),
                    },
                    Err(e) => Failure::Retryable(e.to_string()),
                }
            }
            Err(e) => Failure::Retryable(e.to_string()),
        };
        match outcome {
            Failure::Fatal(msg) => return Err(msg),
            Failure::Retryable(msg) => last = format!("attempt {attempt}: {msg}"),
        }
        if attempt < retry.attempts {
            let wait = backoff.min(retry.total_timeout.saturating_sub(start.elapsed()));
            thread::sleep(wait);
            backoff *= 2;
        }
    }
    Err(last)
}

fn join(endpoint: &str, path: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), path)
}

#[derive(Debug, Clone)]
pub struct HttpProvider {
    pub endpoint: String,
    pub retry: RetryPolicy,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            retry: RetryPolicy::default(),
        }
    }
}

impl ImageProvider for HttpProvider {
    fn generate(&self, prompt: &str, count: usize) -> Result<Vec<ProviderItem>, ProcurementError> {
        post_json::<_, GenerateResponse>(
            &join(&self.endpoint, "generate"),
            &GenerateBody { prompt, count },
            &self.retry,
        )
        .map(|r| r.items)
        .map_err(ProcurementError::ProviderUnavailable)
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    pub endpoint: String,
    pub retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            retry: RetryPolicy::default(),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, image_ref: &str) -> Result<Vec<f32>, ProcurementError> {
        post_json::<_, EmbedResponse>(&join(&self.endpoint, "embed"), &EmbedBody { image_ref }, &self.retry)
            .map(|r| r.embedding)
            .map_err(ProcurementError::EmbedderUnavailable)
    }
}

/// Recorded provider responses, keyed by prompt. Prompts without a
/// recording fall back to `"*"` when present, otherwise yield nothing.
///
/// On disk: `{dir}/generate.json` holding `{"<prompt>": [{"image_ref": ..}]}`.
#[derive(Debug, Clone, Default)]
pub struct FixtureProvider {
    pub responses: HashMap<String, Vec<ProviderItem>>,
}

impl FixtureProvider {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ProcurementError> {
        let text = std::fs::read_to_string(dir.as_ref().join("generate.json"))?;
        Ok(Self {
            responses: serde_json::from_str(&text)?,
        })
    }
}

impl ImageProvider for FixtureProvider {
    fn generate(&self, prompt: &str, _count: usize) -> Result<Vec<ProviderItem>, ProcurementError> {
        Ok(self
            .responses
            .get(prompt)
            .or_else(|| self.responses.get("*"))
            .cloned()
            .unwrap_or_default())
    }
}

/// Recorded embeddings keyed by image reference.
///
/// On disk: `{dir}/embeddings.json` holding `{"<image_ref>": [floats]}`.
#[derive(Debug, Clone, Default)]
pub struct FixtureEmbedder {
    pub vectors: HashMap<String, Vec<f32>>,
}

impl FixtureEmbedder {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ProcurementError> {
        let text = std::fs::read_to_string(dir.as_ref().join("embeddings.json"))?;
        Ok(Self {
            vectors: serde_json::from_str(&text)?,
        })
    }
}

impl Embedder for FixtureEmbedder {
    fn embed(&self, image_ref: &str) -> Result<Vec<f32>, ProcurementError> {
        self.vectors
            .get(image_ref)
            .cloned()
            .ok_or_else(|| ProcurementError::EmbedderUnavailable(format!("no recorded embedding for {image_ref}")))
    }
}
