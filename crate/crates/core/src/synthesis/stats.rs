//! Lexical overlap and dataset-level statistics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::adjudicate::Adjudication;
use super::{Hop, QaItem};
use crate::corpus::CorpusStore;
use crate::providers::{embed_texts, EmbeddingProvider};
use crate::text::{cosine_similarity, tokenize, Language};
use crate::Result;

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

fn clipped_overlap(candidate: &[String], reference: &[String]) -> usize {
    let r = counts(reference);
    counts(candidate).iter().map(|(t, c)| (*c).min(r.get(t).copied().unwrap_or(0))).sum()
}

/// Unigram F1 between `candidate` and `reference` tokens.
pub fn rouge1_f1(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let overlap = clipped_overlap(candidate, reference) as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / candidate.len() as f64;
    let r = overlap / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Clipped unigram precision times the brevity penalty
/// `BP = 1` if `c > r` else `exp(1 − r/c)`.
pub fn bleu1(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let precision = clipped_overlap(candidate, reference) as f64 / c;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    precision * bp
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub count: usize,
    pub avg_question_length: f64,
    pub avg_explanation_length: f64,
    pub avg_distractor_similarity: Option<f64>,
    pub rouge1_content_a: f64,
    pub rouge1_content_b: f64,
    pub bleu1_evidence: f64,
    pub clarity: Option<f64>,
    pub validity: Option<f64>,
    pub difficulty: Option<f64>,
    pub scored_items: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    /// `language/difficulty/clinical_task` → item count.
    pub counts: BTreeMap<String, usize>,
    /// `language/difficulty` → aggregates; plus `overall`.
    pub splits: BTreeMap<String, SplitStats>,
    pub excluded_items: usize,
    pub length_unit: String,
}

#[derive(Default)]
struct Acc {
    n: usize,
    q_len: f64,
    e_len: f64,
    sim: f64,
    sim_n: usize,
    ra: f64,
    rb: f64,
    bleu: f64,
    scores: [f64; 3],
    scored: usize,
}

impl Acc {
    fn finish(&self) -> SplitStats {
        let n = self.n.max(1) as f64;
        let s = self.scored as f64;
        SplitStats {
            count: self.n,
            avg_question_length: self.q_len / n,
            avg_explanation_length: self.e_len / n,
            avg_distractor_similarity: (self.sim_n > 0).then(|| self.sim / self.sim_n as f64),
            rouge1_content_a: self.ra / n,
            rouge1_content_b: self.rb / n,
            bleu1_evidence: self.bleu / n,
            clarity: (self.scored > 0).then(|| self.scores[0] / s),
            validity: (self.scored > 0).then(|| self.scores[1] / s),
            difficulty: (self.scored > 0).then(|| self.scores[2] / s),
            scored_items: self.scored,
        }
    }
}

pub(crate) fn split_key(item: &QaItem) -> String {
    format!("{}/{}", item.language.as_str(), item.difficulty.as_str())
}

/// Per-split and overall Table-1 style aggregates. Items whose evidence
/// anchors do not resolve are excluded and counted.
pub fn compute_overlap_stats(
    dataset: &[QaItem],
    store: &CorpusStore,
    adjudications: &[Adjudication],
    embedder: Option<&dyn EmbeddingProvider>,
) -> Result<DatasetStats> {
    let verdicts: HashMap<&str, &Adjudication> = adjudications.iter().map(|a| (a.qa_id.as_str(), a)).collect();
    let mut accs: BTreeMap<String, Acc> = BTreeMap::new();
    let mut stats = DatasetStats {
        length_unit: "tokens (EN words, ZH characters)".into(),
        ..DatasetStats::default()
    };
    let mut sims: Vec<Option<f64>> = vec![None; dataset.len()];
    if let Some(e) = embedder {
        let mut texts = Vec::with_capacity(dataset.len() * 2);
        for item in dataset {
            texts.push(item.options[item.answer_index].clone());
            texts.push(item.options[item.hard_negative_index].clone());
        }
        if !texts.is_empty() {
            let vecs = embed_texts(e, &texts)?;
            for (i, pair) in vecs.chunks(2).enumerate() {
                sims[i] = Some(cosine_similarity(&pair[0].values, &pair[1].values).clamp(0.0, 1.0));
            }
        }
    }
    for (item, sim) in dataset.iter().zip(sims) {
        let resolve = |hop| {
            item.anchor(hop).and_then(|ev| {
                let chunk = store.chunk(&ev.chunk_id)?.text.clone();
                let span = store.span_text(&ev.chunk_id, ev.sentence_span)?;
                Some((chunk, span))
            })
        };
        let (Some((content_a, span_a)), Some((content_b, span_b))) = (resolve(Hop::Hop1), resolve(Hop::Hop2)) else {
            stats.excluded_items += 1;
            continue;
        };
        let lang: Language = item.language;
        let q = tokenize(&item.question, lang);
        let rationale = tokenize(&item.rationale, lang);
        let evidence = tokenize(&format!("{span_a}{}{span_b}", lang.sentence_joiner()), lang);
        let verdict = verdicts.get(item.qa_id.as_str());
        let task = verdict.map_or(item.clinical_task.as_str(), |v| v.clinical_task.as_str());
        *stats.counts.entry(format!("{}/{task}", split_key(item))).or_default() += 1;
        stats.total += 1;
        for key in [split_key(item), "overall".to_string()] {
            let a = accs.entry(key).or_default();
            a.n += 1;
            a.q_len += q.len() as f64;
            a.e_len += rationale.len() as f64;
            if let Some(s) = sim {
                a.sim += s;
                a.sim_n += 1;
            }
            a.ra += rouge1_f1(&q, &tokenize(&content_a, lang));
            a.rb += rouge1_f1(&q, &tokenize(&content_b, lang));
            a.bleu += bleu1(&rationale, &evidence);
            if let Some(v) = verdict {
                a.scores[0] += v.clarity;
                a.scores[1] += v.validity;
                a.scores[2] += v.difficulty;
                a.scored += 1;
            }
        }
    }
    stats.splits = accs.into_iter().map(|(k, a)| (k, a.finish())).collect();
    Ok(stats)
}
