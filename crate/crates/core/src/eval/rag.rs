//! Retrieval context assembly: coarse cosine pool, optional rerank, then
//! the golden evidence paragraph inserted at a seeded position.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStore;
use crate::providers::{EmbeddingProvider, RerankProvider};
use crate::seed::{derive_seed, rng};
use crate::synthesis::{Hop, QaItem};
use crate::text::cosine_similarity;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Candidates kept by embedding similarity.
    pub coarse_pool_size: usize,
    /// Candidates kept after reranking.
    pub rerank_keep: usize,
    /// Documents in the final context, golden paragraph included.
    pub context_size: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            coarse_pool_size: 50,
            rerank_keep: 15,
            context_size: 5,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_size == 0 || self.rerank_keep == 0 || self.coarse_pool_size == 0 {
            return Err(Error::validation("retrieval sizes must be positive"));
        }
        if self.rerank_keep > self.coarse_pool_size {
            return Err(Error::validation("rerank_keep cannot exceed coarse_pool_size"));
        }
        Ok(())
    }
}

/// Chunk texts with their embeddings, in corpus order.
#[derive(Debug, Clone, Default)]
pub struct ChunkIndex {
    pub ids: Vec<String>,
    pub texts: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl ChunkIndex {
    pub fn from_store(store: &CorpusStore) -> Self {
        ChunkIndex {
            ids: store.chunks.iter().map(|c| c.chunk_id.clone()).collect(),
            texts: store.chunks.iter().map(|c| c.text.clone()).collect(),
            vectors: store.chunks.iter().map(|c| c.embedding.values.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagContext {
    pub qa_id: String,
    pub documents: Vec<String>,
    /// Chunk ids per document; the golden slot lists its evidence chunks joined by `+`.
    pub document_ids: Vec<String>,
    pub golden_position: usize,
    pub config: RetrievalConfig,
}

/// Indices of all chunks ordered by cosine similarity, ties by corpus order.
fn cosine_ranking(index: &ChunkIndex, query: &[f64]) -> Vec<usize> {
    let scores: Vec<f64> = index.vectors.iter().map(|v| cosine_similarity(query, v)).collect();
    let mut order: Vec<usize> = (0..index.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn build_rag_context(
    item: &QaItem,
    index: &ChunkIndex,
    query_vector: &[f64],
    reranker: Option<&dyn RerankProvider>,
    config: &RetrievalConfig,
    seed: u64,
) -> Result<RagContext> {
    config.validate()?;
    let k = config.context_size;
    if index.len() < k {
        return Err(Error::validation(format!(
            "corpus has {} chunks, fewer than the context size {k}",
            index.len()
        )));
    }
    let mut golden: Vec<usize> = Vec::new();
    for hop in [Hop::Hop1, Hop::Hop2] {
        let anchor = item
            .anchor(hop)
            .ok_or_else(|| Error::Context {
                qa_id: item.qa_id.clone(),
                reason: format!("no {hop:?} evidence anchor"),
            })?;
        let pos = index
            .position(&anchor.chunk_id)
            .ok_or_else(|| Error::Context {
                qa_id: item.qa_id.clone(),
                reason: format!("evidence chunk {} is not in the corpus", anchor.chunk_id),
            })?;
        if !golden.contains(&pos) {
            golden.push(pos);
        }
    }
    let excluded: BTreeSet<usize> = golden.iter().copied().collect();
    if index.len() - excluded.len() < k - 1 {
        return Err(Error::validation(format!(
            "only {} non-evidence chunks for {} retrieved slots",
            index.len() - excluded.len(),
            k - 1
        )));
    }
    let cosine = cosine_ranking(index, query_vector);
    let pool: Vec<usize> = cosine.iter().copied().filter(|i| !excluded.contains(i)).take(config.coarse_pool_size).collect();
    let mut ranked: Vec<usize> = match reranker {
        Some(r) => {
            let texts: Vec<String> = pool.iter().map(|&i| index.texts[i].clone()).collect();
            let scores = r.rerank(&item.question, &texts)?;
            if scores.len() != pool.len() {
                return Err(Error::Protocol(format!(
                    "reranker returned {} scores for {} documents",
                    scores.len(),
                    pool.len()
                )));
            }
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            order.into_iter().take(config.rerank_keep).map(|j| pool[j]).collect()
        }
        None => pool.iter().copied().take(config.rerank_keep).collect(),
    };
    // Small pools are topped up from the cosine order so the context is always full.
    for i in cosine {
        if ranked.len() >= k - 1 {
            break;
        }
        if !excluded.contains(&i) && !ranked.contains(&i) {
            ranked.push(i);
        }
    }
    ranked.truncate(k - 1);

    let golden_position = rng(derive_seed(seed, "rag", &item.qa_id)).random_range(0..k);
    let mut documents: Vec<String> = ranked.iter().map(|&i| index.texts[i].clone()).collect();
    let mut document_ids: Vec<String> = ranked.iter().map(|&i| index.ids[i].clone()).collect();
    let golden_text = golden.iter().map(|&i| index.texts[i].trim()).collect::<Vec<_>>().join("\n");
    let golden_id = golden.iter().map(|&i| index.ids[i].as_str()).collect::<Vec<_>>().join("+");
    documents.insert(golden_position, golden_text);
    document_ids.insert(golden_position, golden_id);
    Ok(RagContext {
        qa_id: item.qa_id.clone(),
        documents,
        document_ids,
        golden_position,
        config: *config,
    })
}

/// Embeds every question in one batch and builds its context.
pub fn build_rag_contexts(
    dataset: &[QaItem],
    index: &ChunkIndex,
    embedder: &dyn EmbeddingProvider,
    reranker: Option<&dyn RerankProvider>,
    config: &RetrievalConfig,
    seed: u64,
) -> Result<Vec<RagContext>> {
    let questions: Vec<String> = dataset.iter().map(|i| i.question.clone()).collect();
    let vectors = crate::providers::embed_texts(embedder, &questions)?;
    dataset
        .iter()
        .zip(&vectors)
        .map(|(item, v)| build_rag_context(item, index, &v.values, reranker, config, seed))
        .collect()
}
