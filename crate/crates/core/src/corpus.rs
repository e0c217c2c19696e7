//! Document ingestion, OCR cleanup, sentence splitting and semantic chunking.
//!
//! Chunk boundaries go where the cosine distance between consecutive sentence
//! embeddings reaches a nearest-rank percentile of the distance multiset.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::providers::EmbeddingVector;
use crate::text::{cosine_distance, l2_normalize, sha256_hex, Language};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub page_number: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub language: Language,
    pub pages: Vec<Page>,
    pub source_path: String,
}

impl Document {
    pub fn validate(&self) -> Result<()> {
        for w in self.pages.windows(2) {
            if w[1].page_number <= w[0].page_number {
                return Err(Error::validation(format!(
                    "{}: page numbers must strictly increase ({} then {})",
                    self.doc_id, w[0].page_number, w[1].page_number
                )));
            }
        }
        Ok(())
    }

    pub fn cleaned(mut self) -> Self {
        for p in &mut self.pages {
            p.text = clean_text(&p.text);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub page_number: u32,
    pub sentence_index: usize,
    pub text: String,
}

/// Inclusive range of sentence indices within one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
}

impl SentenceSpan {
    pub fn new(start: usize, end: usize) -> Self {
        SentenceSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: &SentenceSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub sentence_span: SentenceSpan,
    pub text: String,
    pub page_anchor: u32,
    pub embedding: EmbeddingVector,
}

fn page_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*-{3,}\s*page(?:\s+(\d+))?\s*-{3,}\s*$").expect("valid regex"))
}

/// Splits raw file text into pages on form feeds or `--- page N ---` marker lines.
/// Pages without an explicit number continue from the previous one.
pub fn parse_pages(raw: &str) -> Vec<Page> {
    let mut pages = Vec::new();
    let mut current = String::new();
    let mut number = 1u32;
    let mut next_explicit: Option<u32> = None;
    let push = |text: &mut String, number: &mut u32, explicit: Option<u32>, pages: &mut Vec<Page>| {
        if let Some(n) = explicit {
            *number = n;
        }
        if !text.trim().is_empty() {
            pages.push(Page {
                page_number: *number,
                text: std::mem::take(text),
            });
            *number += 1;
        } else {
            text.clear();
        }
    };
    for line in raw.split_inclusive('\n') {
        if let Some(caps) = page_marker().captures(line.trim_end_matches(['\n', '\r'])) {
            push(&mut current, &mut number, next_explicit.take(), &mut pages);
            next_explicit = caps.get(1).and_then(|m| m.as_str().parse().ok());
            continue;
        }
        let mut parts = line.split('\u{0C}');
        current.push_str(parts.next().unwrap_or(""));
        for part in parts {
            push(&mut current, &mut number, next_explicit.take(), &mut pages);
            current.push_str(part);
        }
    }
    push(&mut current, &mut number, next_explicit.take(), &mut pages);
    pages
}

pub fn load_document(path: &Path, doc_id: &str, language: Language) -> Result<Document> {
    let raw = std::fs::read_to_string(path)?;
    let doc = Document {
        doc_id: doc_id.to_string(),
        language,
        pages: parse_pages(&raw),
        source_path: path.display().to_string(),
    };
    doc.validate()?;
    Ok(doc)
}

fn hyphen_break() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\w)-[ \t]*\r?\n\s*(\w)").expect("valid regex"))
}

/// Normalizes OCR output: drops control characters, joins words hyphenated
/// across line breaks, collapses whitespace runs to one space. Idempotent.
pub fn clean_text(raw: &str) -> String {
    let no_ctrl: String = raw
        .chars()
        .filter(|c| !c.is_control() || matches!(c, '\n' | '\t' | '\r'))
        .collect();
    let joined = hyphen_break().replace_all(&no_ctrl, "$1$2");
    joined.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_cjk_terminator(c: char) -> bool {
    matches!(c, '。' | '！' | '？')
}

fn is_ascii_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '」' | '』' | '）')
}

/// Splits cleaned text into sentences. CJK terminators always end a sentence;
/// ASCII terminators end one when followed by whitespace or end of text (or,
/// for Chinese text, by a non-ASCII character).
pub fn split_text(text: &str, language: Language) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if is_cjk_terminator(c) || is_ascii_terminator(c) {
            let mut j = i + 1;
            while j < chars.len() && (is_cjk_terminator(chars[j]) || is_ascii_terminator(chars[j]) || is_closer(chars[j])) {
                j += 1;
            }
            let ends = is_cjk_terminator(c)
                || j == chars.len()
                || chars[j].is_whitespace()
                || (language == Language::Zh && !chars[j].is_ascii());
            if ends {
                let s: String = chars[start..j].iter().collect::<String>().trim().to_string();
                if !s.is_empty() {
                    out.push(s);
                }
                start = j;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    let tail: String = chars[start..].iter().collect::<String>().trim().to_string();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

pub fn split_sentences(doc: &Document) -> Vec<Sentence> {
    let mut out = Vec::new();
    for page in &doc.pages {
        for text in split_text(&page.text, doc.language) {
            out.push(Sentence {
                doc_id: doc.doc_id.clone(),
                page_number: page.page_number,
                sentence_index: out.len(),
                text,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingConfig {
    /// Percentile in (0, 100] of the consecutive-distance multiset.
    pub percentile: f64,
    pub max_sentences: usize,
    /// One threshold over the whole corpus instead of one per document.
    pub global_threshold: bool,
    pub language: Language,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        ChunkingConfig {
            percentile: 95.0,
            max_sentences: 64,
            global_threshold: false,
            language: Language::En,
        }
    }
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// multiset at or below it.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(p > 0.0 && p <= 100.0) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p * n as f64) / 100.0 - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Some(sorted[rank - 1])
}

/// Indices `i` such that a boundary goes after position `i` of `distances`.
fn breakpoints(distances: &[f64], tau: f64, all_equal: bool) -> Vec<bool> {
    distances.iter().map(|d| !all_equal && *d >= tau).collect()
}

fn all_equal(values: &[f64]) -> bool {
    values.windows(2).all(|w| (w[0] - w[1]).abs() <= 1e-12)
}

pub fn semantic_chunk(
    sentences: &[Sentence],
    embeddings: &[EmbeddingVector],
    config: &ChunkingConfig,
) -> Result<Vec<Chunk>> {
    if sentences.len() != embeddings.len() {
        return Err(Error::validation(format!(
            "{} sentences but {} embeddings",
            sentences.len(),
            embeddings.len()
        )));
    }
    if sentences.is_empty() {
        return Err(Error::validation("semantic_chunk needs at least one sentence"));
    }
    if !(config.percentile > 0.0 && config.percentile <= 100.0) {
        return Err(Error::validation("percentile must lie in (0, 100]"));
    }
    if config.max_sentences == 0 {
        return Err(Error::validation("max_sentences must be positive"));
    }

    // contiguous per-document runs, in input order
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        match runs.last_mut() {
            Some((_, end)) if sentences[*end].doc_id == s.doc_id => {
                if s.sentence_index != sentences[*end].sentence_index + 1 {
                    return Err(Error::validation(format!(
                        "{}: sentence indices must be consecutive",
                        s.doc_id
                    )));
                }
                *end = i;
            }
            _ => runs.push((i, i)),
        }
    }
    let distances: Vec<Vec<f64>> = runs
        .iter()
        .map(|&(a, b)| {
            (a..b)
                .map(|i| cosine_distance(&embeddings[i].values, &embeddings[i + 1].values))
                .collect()
        })
        .collect();
    let global: Vec<f64> = distances.iter().flatten().copied().collect();
    let global_tau = nearest_rank_percentile(&global, config.percentile);
    let global_equal = all_equal(&global);

    let mut chunks = Vec::new();
    for (&(a, b), dists) in runs.iter().zip(&distances) {
        let (tau, equal) = if config.global_threshold {
            (global_tau, global_equal)
        } else {
            (nearest_rank_percentile(dists, config.percentile), all_equal(dists))
        };
        let breaks = tau.map_or_else(|| vec![false; dists.len()], |t| breakpoints(dists, t, equal));
        let mut start = a;
        let mut chunk_no = 0;
        for i in a..=b {
            let natural = i < b && breaks[i - a];
            let forced = i + 1 - start >= config.max_sentences;
            if i == b || natural || forced {
                chunks.push(make_chunk(&sentences[start..=i], &embeddings[start..=i], chunk_no, config.language));
                chunk_no += 1;
                start = i + 1;
            }
        }
    }
    Ok(chunks)
}

fn make_chunk(sentences: &[Sentence], embeddings: &[EmbeddingVector], chunk_no: usize, language: Language) -> Chunk {
    let first = &sentences[0];
    let last = &sentences[sentences.len() - 1];
    let dim = embeddings[0].dimension;
    let mut mean = vec![0.0; dim];
    for e in embeddings {
        for (m, v) in mean.iter_mut().zip(&e.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= embeddings.len() as f64);
    l2_normalize(&mut mean);
    let text = sentences
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(language.sentence_joiner());
    Chunk {
        chunk_id: format!("{}#c{:04}", first.doc_id, chunk_no),
        doc_id: first.doc_id.clone(),
        sentence_span: SentenceSpan::new(first.sentence_index, last.sentence_index),
        page_anchor: first.page_number,
        embedding: EmbeddingVector {
            dimension: dim,
            source_text_hash: sha256_hex(&text),
            values: mean,
        },
        text,
    }
}

/// Read-only index over sentences and chunks used to resolve provenance anchors.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    pub language: Language,
    pub sentences: Vec<Sentence>,
    pub chunks: Vec<Chunk>,
    sentence_index: HashMap<(String, usize), usize>,
    chunk_index: HashMap<String, usize>,
}

impl CorpusStore {
    pub fn new(language: Language, sentences: Vec<Sentence>, chunks: Vec<Chunk>) -> Self {
        let sentence_index = sentences
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.doc_id.clone(), s.sentence_index), i))
            .collect();
        let chunk_index = chunks.iter().enumerate().map(|(i, c)| (c.chunk_id.clone(), i)).collect();
        CorpusStore {
            language,
            sentences,
            chunks,
            sentence_index,
            chunk_index,
        }
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunk_index.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn sentence(&self, doc_id: &str, index: usize) -> Option<&Sentence> {
        self.sentence_index
            .get(&(doc_id.to_string(), index))
            .map(|&i| &self.sentences[i])
    }

    pub fn chunk_sentences(&self, chunk_id: &str) -> Option<Vec<&Sentence>> {
        let c = self.chunk(chunk_id)?;
        (c.sentence_span.start..=c.sentence_span.end)
            .map(|i| self.sentence(&c.doc_id, i))
            .collect()
    }

    /// Text of `span` inside `chunk_id`, or `None` when the anchor does not resolve.
    pub fn span_text(&self, chunk_id: &str, span: SentenceSpan) -> Option<String> {
        let c = self.chunk(chunk_id)?;
        if span.start > span.end || !c.sentence_span.contains(&span) {
            return None;
        }
        let parts: Option<Vec<&str>> = (span.start..=span.end)
            .map(|i| self.sentence(&c.doc_id, i).map(|s| s.text.as_str()))
            .collect();
        Some(parts?.join(self.language.sentence_joiner()))
    }

    /// Page holding the first sentence of `span`.
    pub fn page_of(&self, chunk_id: &str, span: SentenceSpan) -> Option<u32> {
        let c = self.chunk(chunk_id)?;
        self.sentence(&c.doc_id, span.start).map(|s| s.page_number)
    }

    /// Checks the anchor-integrity property for every chunk.
    pub fn verify_anchors(&self) -> Result<()> {
        for c in &self.chunks {
            let text = self
                .span_text(&c.chunk_id, c.sentence_span)
                .ok_or_else(|| Error::validation(format!("{}: span does not resolve", c.chunk_id)))?;
            if text != c.text {
                return Err(Error::validation(format!("{}: text differs from sentence store", c.chunk_id)));
            }
            if self.page_of(&c.chunk_id, c.sentence_span) != Some(c.page_anchor) {
                return Err(Error::validation(format!("{}: page anchor mismatch", c.chunk_id)));
            }
        }
        Ok(())
    }

    pub fn docs(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for s in &self.sentences {
            *m.entry(s.doc_id.as_str()).or_insert(0) += 1;
        }
        m
    }
}
