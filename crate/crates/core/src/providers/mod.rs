//! Provider-agnostic chat, embedding and rerank clients.
//!
//! Every pipeline stage talks to models through the traits here, so the same
//! code runs against a hosted endpoint ([`http`]), the deterministic offline
//! mocks ([`mock`]), or either of those behind the content-addressed
//! [`cache::ResponseCache`].

pub mod cache;
pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};

use crate::text::{norm, sha256_hex};
use crate::{Error, Result};

pub use cache::{CachePolicy, CacheEntry, ResponseCache};

/// First line of the system message; lets mocks route structured requests.
pub const TASK_PREFIX: &str = "task: ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub model_name: String,
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(model_name: impl Into<String>, temperature: f64) -> Self {
        ChatRequest {
            messages: Vec::new(),
            temperature,
            max_output_tokens: 1024,
            model_name: model_name.into(),
            seed: None,
        }
    }

    pub fn message(mut self, role: &str, content: impl Into<String>) -> Self {
        self.messages.push(ChatMessage {
            role: role.to_string(),
            content: content.into(),
        });
        self
    }

    /// Adds the routing system message `task: <name>` followed by `instructions`.
    pub fn task(self, task: &str, instructions: &str) -> Self {
        self.message("system", format!("{TASK_PREFIX}{task}\n{instructions}"))
    }

    pub fn user(self, content: impl Into<String>) -> Self {
        self.message("user", content)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::validation("chat request has no messages"));
        }
        if self.messages.iter().any(|m| m.role.trim().is_empty()) {
            return Err(Error::validation("chat message with empty role"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::validation("temperature must be finite and >= 0"));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::validation("max_output_tokens must be positive"));
        }
        Ok(())
    }

    /// The routing tag, if the request was built with [`ChatRequest::task`].
    pub fn task_name(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == "system")
            .and_then(|m| m.content.lines().next())
            .and_then(|l| l.strip_prefix(TASK_PREFIX))
            .map(str::trim)
    }

    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Stable digest over the canonical JSON form (sorted keys), model name
    /// and temperature included.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        sha256_hex(value.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub dimension: usize,
    pub source_text_hash: String,
}

pub trait ChatProvider: Send + Sync {
    fn provider_id(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> String;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Cross-encoder style scorer: one relevance score per document.
pub trait RerankProvider: Send + Sync {
    fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<f64>>;
}

impl<T: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<T> {
    fn provider_id(&self) -> String {
        (**self).provider_id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        (**self).complete(request)
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<T> {
    fn provider_id(&self) -> String {
        (**self).provider_id()
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        (**self).embed_batch(texts)
    }
}

/// Validated chat call with optional response caching.
pub fn chat_complete(
    provider: &dyn ChatProvider,
    cache: Option<&ResponseCache>,
    request: &ChatRequest,
    policy: CachePolicy,
) -> Result<String> {
    request.validate()?;
    let Some(cache) = cache.filter(|_| policy == CachePolicy::Use) else {
        return provider.complete(request);
    };
    let key = request.digest();
    if let Some(entry) = cache.get(&key)? {
        return Ok(entry.response_payload);
    }
    let text = provider.complete(request)?;
    cache.put(&CacheEntry::new(key, text.clone(), provider.provider_id()))?;
    Ok(text)
}

/// A chat provider bundled with its cache; the form stages hold on to.
pub struct ChatClient {
    provider: Box<dyn ChatProvider>,
    cache: Option<ResponseCache>,
    policy: CachePolicy,
}

impl ChatClient {
    pub fn new(provider: impl ChatProvider + 'static) -> Self {
        ChatClient {
            provider: Box::new(provider),
            cache: None,
            policy: CachePolicy::Use,
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_policy(mut self, policy: CachePolicy) -> Self {
        self.policy = policy;
        self
    }
}

impl ChatProvider for ChatClient {
    fn provider_id(&self) -> String {
        self.provider.provider_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        chat_complete(self.provider.as_ref(), self.cache.as_ref(), request, self.policy)
    }
}

/// Embeds a batch, preserving order and checking the provider contract.
pub fn embed_texts(provider: &dyn EmbeddingProvider, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Err(Error::validation("embed_texts needs at least one text"));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(Error::validation(format!("text #{i} is empty after trimming")));
    }
    let raw = provider.embed_batch(texts)?;
    if raw.len() != texts.len() {
        return Err(Error::ProviderFault(format!(
            "requested {} embeddings, received {}",
            texts.len(),
            raw.len()
        )));
    }
    let dim = raw[0].len();
    let mut out = Vec::with_capacity(raw.len());
    for (text, values) in texts.iter().zip(raw) {
        if values.len() != dim || dim == 0 {
            return Err(Error::ProviderFault(format!(
                "embedding dimension mismatch within batch ({} vs {dim})",
                values.len()
            )));
        }
        let n = norm(&values);
        if !n.is_finite() || n <= 0.0 {
            return Err(Error::ProviderFault("embedding with zero or non-finite norm".into()));
        }
        out.push(EmbeddingVector {
            dimension: dim,
            source_text_hash: sha256_hex(text),
            values,
        });
    }
    Ok(out)
}

/// Pulls the first balanced JSON object out of free-form model output.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_str {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' if start.is_some() => in_str = true,
            b'{' => {
                if start.is_none() {
                    start = Some(i);
                }
                depth += 1;
            }
            b'}' if start.is_some() => {
                depth -= 1;
                if depth == 0 {
                    return start.map(|s| &text[s..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses a JSON object leniently: the whole text first, then the first
/// balanced `{...}` span inside it.
pub fn parse_json_lenient<T: serde::de::DeserializeOwned>(text: &str) -> Option<T> {
    serde_json::from_str(text.trim())
        .ok()
        .or_else(|| extract_json_object(text).and_then(|s| serde_json::from_str(s).ok()))
}

/// Wraps a structured payload in a fenced JSON block for the prompt body.
pub fn json_block(payload: &serde_json::Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(payload).expect("payload serializes"))
}

/// Extracts the fenced JSON payload written by [`json_block`].
pub fn payload_of(text: &str) -> Option<serde_json::Value> {
    let start = text.find("```json")? + "```json".len();
    let end = start + text[start..].find("```")?;
    serde_json::from_str(text[start..end].trim()).ok()
}
