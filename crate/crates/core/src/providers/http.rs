//! JSON-over-HTTP clients for OpenAI-compatible chat, embedding and rerank
//! endpoints.
//!
//! * chat: `POST {base}/chat/completions`, reads `choices[0].message.content`
//! * embeddings: `POST {base}/embeddings`, reads `data[*].embedding` ordered by `index`
//! * rerank: `POST {base}/rerank`, reads `results[*].{index, relevance_score}`
//!
//! The bearer token comes from an environment variable. Transport failures and
//! HTTP 429 are retried with exponential backoff; everything else fails fast.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, EmbeddingProvider, RerankProvider};
use crate::{Error, Result};

pub const DEFAULT_API_KEY_ENV: &str = "HOPBENCH_API_KEY";

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Limiter {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            slots: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut slots = self.slots.lock().unwrap_or_else(|p| p.into_inner());
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap_or_else(|p| p.into_inner());
        }
        *slots -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
pub struct HttpEndpoint {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
    limiter: Limiter,
}

impl HttpEndpoint {
    /// `api_key_env` names the environment variable holding the bearer token;
    /// an unset variable means no `Authorization` header.
    pub fn new(base_url: &str, api_key_env: &str, max_in_flight: usize, timeout: Duration) -> Self {
        HttpEndpoint {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: std::env::var(api_key_env).ok().filter(|k| !k.is_empty()),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            retry: RetryPolicy::default(),
            limiter: Limiter::new(max_in_flight),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}/{}", self.base_url, path.trim_start_matches('/'));
        let _slot = self.limiter.acquire();
        let mut backoff = self.retry.initial_backoff;
        let mut last = Error::Transport("no attempt made".into());
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                thread::sleep(backoff);
                backoff *= 2;
            }
            let mut req = self.agent.post(&url).set("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body.clone()) {
                Ok(resp) => {
                    let text = resp
                        .into_string()
                        .map_err(|e| Error::Transport(format!("reading body from {url}: {e}")))?;
                    return serde_json::from_str(&text)
                        .map_err(|e| Error::Protocol(format!("{url} returned malformed JSON: {e}")));
                }
                Err(ureq::Error::Status(429, _)) => {
                    last = Error::Transport(format!("{url}: rate limited (429)"));
                    log::warn!("rate limited by {url}, attempt {}", attempt + 1);
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let detail = resp.into_string().unwrap_or_default();
                    return Err(Error::ProviderFault(format!("{url}: HTTP {code}: {detail}")));
                }
                Err(ureq::Error::Transport(t)) => {
                    last = Error::Transport(format!("{url}: {t}"));
                    log::warn!("transport error from {url}, attempt {}: {t}", attempt + 1);
                }
            }
        }
        Err(last)
    }
}

pub struct HttpChat {
    endpoint: HttpEndpoint,
}

impl HttpChat {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        HttpChat { endpoint }
    }
}

impl ChatProvider for HttpChat {
    fn provider_id(&self) -> String {
        format!("http:{}", self.endpoint.base_url)
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        request.validate()?;
        let mut body = json!({
            "model": request.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let resp = self.endpoint.post("chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Protocol("response lacks choices[0].message.content".into()))
    }
}

pub struct HttpEmbedder {
    endpoint: HttpEndpoint,
    model: String,
}

impl HttpEmbedder {
    pub fn new(endpoint: HttpEndpoint, model: impl Into<String>) -> Self {
        HttpEmbedder {
            endpoint,
            model: model.into(),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn provider_id(&self) -> String {
        format!("http:{}#{}", self.endpoint.base_url, self.model)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let resp = self
            .endpoint
            .post("embeddings", &json!({ "model": self.model, "input": texts }))?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol("embedding response lacks `data`".into()))?;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let emb = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Protocol("embedding item lacks `embedding`".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::Protocol("non-numeric embedding value".into())))
                .collect::<Result<Vec<f64>>>()?;
            rows.push((index, emb));
        }
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

pub struct HttpReranker {
    endpoint: HttpEndpoint,
    model: String,
}

impl HttpReranker {
    pub fn new(endpoint: HttpEndpoint, model: impl Into<String>) -> Self {
        HttpReranker {
            endpoint,
            model: model.into(),
        }
    }
}

impl RerankProvider for HttpReranker {
    fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<f64>> {
        let resp = self.endpoint.post(
            "rerank",
            &json!({ "model": self.model, "query": query, "documents": documents }),
        )?;
        let results = resp
            .get("results")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol("rerank response lacks `results`".into()))?;
        let mut scores = vec![f64::NEG_INFINITY; documents.len()];
        for r in results {
            let idx = r.get("index").and_then(Value::as_u64);
            let score = r.get("relevance_score").and_then(Value::as_f64);
            match (idx, score) {
                (Some(i), Some(s)) if (i as usize) < scores.len() => scores[i as usize] = s,
                _ => return Err(Error::Protocol("malformed rerank result entry".into())),
            }
        }
        Ok(scores)
    }
}
