//! Deterministic offline providers.
//!
//! [`MockChat`] answers structured requests (routed by the `task:` tag) with
//! template expansions keyed by the request digest, so the same request always
//! produces the same bytes. [`MockEmbedder`] produces feature-hashed
//! bag-of-words vectors: a pure function of `(text, seed)`, unit-normalized, and
//! topical enough for chunking and clustering to behave sensibly on toy data.

use std::collections::HashSet;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{payload_of, ChatProvider, ChatRequest, EmbeddingProvider, RerankProvider};
use crate::text::{contains_surface, l2_normalize, normalize_surface, tokenize, Language};
use crate::{Error, Result};

pub const TASK_SUMMARIZE: &str = "summarize";
pub const TASK_EXTRACT: &str = "extract_triplets";
pub const TASK_VIGNETTE: &str = "synthesize_vignette";
pub const TASK_ADJUDICATE: &str = "adjudicate_quality";
pub const TASK_ANSWER: &str = "answer_mcq";

const CLINICAL_TASKS: [&str; 6] = [
    "Basic Medicine",
    "Clinical Diagnosis",
    "Clinical Treatment",
    "Pharmacy/Drug Safety",
    "Prevention/Epidemiology",
    "Medical Humanities",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletFixture {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

/// Parses `head<TAB>relation<TAB>tail` lines; `#` starts a comment.
pub fn parse_triplet_fixtures(text: &str) -> Result<Vec<TripletFixture>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
        if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::validation(format!(
                "fixture line {}: expected head<TAB>relation<TAB>tail",
                i + 1
            )));
        }
        out.push(TripletFixture {
            head: parts[0].to_string(),
            relation: parts[1].to_string(),
            tail: parts[2].to_string(),
        });
    }
    Ok(out)
}

fn digest_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
        h.update([0xff]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Default)]
pub struct MockChat {
    pub seed: u64,
    pub fixtures: Vec<TripletFixture>,
    /// One in `leak_every` first-attempt vignette drafts names the masked
    /// entity, imitating an imperfect generator. 0 disables leaking.
    pub leak_every: u64,
}

impl MockChat {
    pub fn new(seed: u64) -> Self {
        MockChat {
            seed,
            fixtures: Vec::new(),
            leak_every: 10,
        }
    }

    pub fn with_fixtures(mut self, fixtures: Vec<TripletFixture>) -> Self {
        self.fixtures = fixtures;
        self
    }

    pub fn with_fixture_file(self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(self.with_fixtures(parse_triplet_fixtures(&text)?))
    }

    fn key(&self, request: &ChatRequest) -> u64 {
        digest_u64(&[&self.seed.to_le_bytes(), request.digest().as_bytes()])
    }

    fn summarize(&self, payload: &Value) -> String {
        let passages: Vec<&str> = payload["passages"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let firsts: Vec<String> = passages
            .iter()
            .take(3)
            .map(|p| first_sentence(p).to_string())
            .collect();
        format!("Summary of {} passages: {}", passages.len(), firsts.join(" "))
    }

    fn extract(&self, payload: &Value) -> String {
        let mut triplets = Vec::new();
        for s in payload["sentences"].as_array().into_iter().flatten() {
            let text = s["text"].as_str().unwrap_or("");
            for f in &self.fixtures {
                if contains_surface(text, &f.head) && contains_surface(text, &f.tail) {
                    triplets.push(json!({
                        "head": f.head,
                        "relation": f.relation,
                        "tail": f.tail,
                        "chunk_id": s["chunk_id"],
                        "sentence_start": s["sentence_index"],
                        "sentence_end": s["sentence_index"],
                    }));
                }
            }
        }
        json!({ "triplets": triplets }).to_string()
    }

    fn vignette(&self, payload: &Value, key: u64) -> String {
        let s = |k: &str| payload[k].as_str().unwrap_or("").to_string();
        let a = s("context_entity");
        let b = s("target");
        let masked: Vec<String> = payload["masked_terms"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
            .unwrap_or_default();
        let bridge = masked.first().cloned().unwrap_or_default();
        let attempt = payload["attempt"].as_u64().unwrap_or(0);
        let zh = payload["language"].as_str() == Some("ZH");
        let age = 35 + key % 45;
        let leak = self.leak_every > 0 && attempt == 0 && key % self.leak_every == 0;
        let question = match (zh, leak) {
            (false, false) => format!(
                "A {age}-year-old patient with long-standing {a} is reviewed in clinic. \
                 Considering the underlying pathological cascade, which downstream finding is most likely to develop?"
            ),
            (false, true) => format!(
                "A {age}-year-old patient with long-standing {a} shows signs of {bridge}. \
                 Which downstream finding is most likely to develop?"
            ),
            (true, false) => format!("一名{age}岁的{a}患者前来复诊。结合潜在的病理机制，最可能出现下列哪种后果？"),
            (true, true) => format!("一名{age}岁的{a}患者出现{bridge}。最可能出现下列哪种后果？"),
        };
        let rationale = if zh {
            format!("{a}{}{bridge}，{bridge}{}{b}。", s("bridge_relation"), s("target_relation"))
        } else {
            format!(
                "{a} {} {bridge}; {bridge} in turn {} {b}, so {b} is the expected consequence.",
                s("bridge_relation"),
                s("target_relation")
            )
        };
        json!({ "question": question, "rationale": rationale }).to_string()
    }

    fn adjudicate(&self, key: u64) -> String {
        let task = CLINICAL_TASKS[(key % 5) as usize];
        json!({
            "clinical_task": task,
            "reasoning_type": "Multi-hop",
            "clarity_score": 4 + (key >> 8) % 2,
            "validity_score": 4 + (key >> 16) % 2,
            "difficulty_score": 2 + (key >> 24) % 3,
        })
        .to_string()
    }

    /// Picks the option best supported by any supplied context documents;
    /// without context the pick is a digest-derived guess.
    fn answer(&self, prompt: &str, key: u64) -> String {
        let (context, options) = parse_mcq_prompt(prompt);
        if options.is_empty() {
            return "I cannot determine the answer.".into();
        }
        let mut pick = (key % options.len() as u64) as usize;
        if !context.is_empty() {
            let hits: Vec<usize> = options
                .iter()
                .map(|o| context.iter().filter(|d| contains_surface(d, o)).count())
                .collect();
            let best = *hits.iter().max().unwrap_or(&0);
            if best > 0 {
                pick = hits.iter().position(|&h| h == best).unwrap_or(pick);
            }
        }
        format!("The answer is {}.", (b'A' + pick as u8) as char)
    }
}

fn first_sentence(text: &str) -> &str {
    let end = text
        .char_indices()
        .find(|(_, c)| matches!(c, '.' | '!' | '?' | '。' | '！' | '？'))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(text.len());
    text[..end].trim()
}

/// Splits an evaluation prompt into context documents and option texts.
pub(crate) fn parse_mcq_prompt(prompt: &str) -> (Vec<String>, Vec<String>) {
    let mut docs = Vec::new();
    let mut options = Vec::new();
    let mut current_doc: Option<String> = None;
    for line in prompt.lines() {
        if line.starts_with("[Document ") {
            if let Some(d) = current_doc.take() {
                docs.push(d);
            }
            current_doc = Some(String::new());
            continue;
        }
        if line.starts_with("Question:") {
            if let Some(d) = current_doc.take() {
                docs.push(d);
            }
        }
        if let Some(doc) = current_doc.as_mut() {
            doc.push_str(line);
            doc.push('\n');
            continue;
        }
        let b = line.as_bytes();
        if b.len() >= 3 && b[0].is_ascii_uppercase() && b[1] == b'.' && b[2] == b' ' {
            let expected = b'A' + options.len() as u8;
            if b[0] == expected {
                options.push(line[3..].trim().to_string());
            }
        }
    }
    if let Some(d) = current_doc {
        docs.push(d);
    }
    (docs, options)
}

impl ChatProvider for MockChat {
    fn provider_id(&self) -> String {
        format!("mock-chat:{}", self.seed)
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        request.validate()?;
        let key = self.key(request);
        let user = request.last_user();
        let payload = payload_of(user).unwrap_or(Value::Null);
        Ok(match request.task_name() {
            Some(TASK_SUMMARIZE) => self.summarize(&payload),
            Some(TASK_EXTRACT) => self.extract(&payload),
            Some(TASK_VIGNETTE) => self.vignette(&payload, key),
            Some(TASK_ADJUDICATE) => self.adjudicate(key),
            Some(TASK_ANSWER) => self.answer(user, key),
            _ => format!("mock response {:016x}", key),
        })
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "into", "is", "it", "its",
    "of", "on", "or", "that", "the", "this", "to", "was", "were", "which", "with",
];

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub dimension: usize,
    pub seed: u64,
    stop: HashSet<&'static str>,
}

impl MockEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        MockEmbedder {
            dimension: dimension.max(2),
            seed,
            stop: STOPWORDS.iter().copied().collect(),
        }
    }

    fn bump(&self, v: &mut [f64], token: &str, weight: f64) {
        let h = digest_u64(&[&self.seed.to_le_bytes(), token.as_bytes()]);
        let slot = (h % self.dimension as u64) as usize;
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        v[slot] += sign * weight;
        let slot2 = ((h >> 20) % self.dimension as u64) as usize;
        v[slot2] += 0.5 * sign * weight;
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for tok in tokenize(text, Language::Other) {
            if !self.stop.contains(tok.as_str()) {
                self.bump(&mut v, &tok, 1.0);
            }
        }
        if v.iter().all(|x| *x == 0.0) {
            self.bump(&mut v, &normalize_surface(text), 1.0);
        }
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        l2_normalize(&mut v);
        v
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn provider_id(&self) -> String {
        format!("mock-embed:{}:{}", self.dimension, self.seed)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Token-overlap scorer standing in for a cross-encoder.
#[derive(Debug, Clone, Default)]
pub struct MockReranker;

impl RerankProvider for MockReranker {
    fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<f64>> {
        let q: HashSet<String> = tokenize(query, Language::Other).into_iter().collect();
        Ok(documents
            .iter()
            .map(|d| {
                let t: HashSet<String> = tokenize(d, Language::Other).into_iter().collect();
                let union = q.union(&t).count();
                if union == 0 {
                    0.0
                } else {
                    q.intersection(&t).count() as f64 / union as f64
                }
            })
            .collect())
    }
}
