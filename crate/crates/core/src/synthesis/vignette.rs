//! Masked vignette generation for a completed chain.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{verify_masking, Difficulty, EvidenceAnchor, GenerationMetadata, Hop, MaskedEntity, QaItem, ReasoningChain};
use crate::corpus::CorpusStore;
use crate::kg::{distances_from, KnowledgeGraph};
use crate::providers::mock::TASK_VIGNETTE;
use crate::providers::{chat_complete, json_block, parse_json_lenient, CachePolicy, ChatProvider, ChatRequest};
use crate::seed::rng;
use crate::text::{normalize_surface, sha256_hex, Language};
use crate::{Error, Result};

const VIGNETTE_INSTRUCTIONS: &str = "Write a realistic clinical vignette for a multiple-choice question. The patient \
presents with the clinical context entity; the question must ask which downstream consequence is most likely, so \
that the correct answer is the target entity. Reasoning requires an intermediate mechanism that MUST NOT be named: \
none of the masked_terms may appear in the question, in any spelling. Also write a short rationale that explains \
both steps (the rationale may name the mechanism). Write in the requested language. Reply with strict JSON only: \
{\"question\": \"...\", \"rationale\": \"...\"}.";

/// Filler options must be at least this many undirected hops from `A`.
pub const FILLER_MIN_DISTANCE: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub n_options: usize,
    pub language: Language,
    pub difficulty: Difficulty,
    pub model_name: String,
    pub temperature: f64,
    /// Regenerations after a masking violation or unparseable reply.
    pub max_retries: u32,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            n_options: 4,
            language: Language::En,
            difficulty: Difficulty::Hard,
            model_name: "mock".into(),
            temperature: 0.7,
            max_retries: 2,
        }
    }
}

#[derive(Debug, Deserialize)]
struct Draft {
    question: String,
    rationale: String,
}

fn name<'g>(graph: &'g KnowledgeGraph, id: &str) -> Result<&'g str> {
    graph
        .entity(id)
        .map(|e| e.canonical_name.as_str())
        .ok_or_else(|| Error::validation(format!("unknown entity {id}")))
}

/// Filler candidates: active entities at least [`FILLER_MIN_DISTANCE`] hops
/// from `A` (or unreachable) whose names differ from the chain's options.
pub fn filler_candidates<'g>(chain: &ReasoningChain, graph: &'g KnowledgeGraph) -> Result<Vec<&'g str>> {
    let dist = distances_from(graph, &chain.a)?;
    let excluded = [&chain.a, &chain.e_bridge, &chain.b];
    let mut taken: Vec<String> = [Some(&chain.b), chain.b_prime.as_ref()]
        .into_iter()
        .flatten()
        .filter_map(|id| graph.entity(id).map(|e| normalize_surface(&e.canonical_name)))
        .collect();
    let mut out = Vec::new();
    for e in graph.active_entities() {
        let id = e.entity_id.as_str();
        if excluded.iter().any(|x| x.as_str() == id) || chain.e_sib.as_deref() == Some(id) || chain.b_prime.as_deref() == Some(id) {
            continue;
        }
        if dist.get(id).is_some_and(|&d| d < FILLER_MIN_DISTANCE) {
            continue;
        }
        let key = normalize_surface(&e.canonical_name);
        if taken.contains(&key) {
            continue;
        }
        taken.push(key);
        out.push(id);
    }
    Ok(out)
}

fn discard(chain: &ReasoningChain, reason: impl Into<String>) -> Error {
    Error::ItemDiscarded {
        chain_id: chain.chain_id.clone(),
        reason: reason.into(),
    }
}

/// Drafts a vignette about `A` whose answer is `B`, with `B′` as the hard
/// negative and distant fillers, regenerating while the bridge leaks.
pub fn synthesize_item(
    chain: &ReasoningChain,
    graph: &KnowledgeGraph,
    store: &CorpusStore,
    llm: &dyn ChatProvider,
    config: &SynthesisConfig,
    seed: u64,
) -> Result<QaItem> {
    if !(3..=26).contains(&config.n_options) {
        return Err(Error::validation(format!("n_options must be in 3..=26, got {}", config.n_options)));
    }
    let (Some(_), Some(b_prime), Some(ev_sib)) = (&chain.e_sib, &chain.b_prime, &chain.evidence_sibling) else {
        return Err(Error::validation(format!("{} has no hard negative", chain.chain_id)));
    };
    let bridge = graph
        .entity(&chain.e_bridge)
        .ok_or_else(|| Error::validation(format!("unknown entity {}", chain.e_bridge)))?;
    let masked = MaskedEntity {
        entity_id: bridge.entity_id.clone(),
        canonical: bridge.canonical_name.clone(),
        aliases: bridge.aliases.iter().cloned().collect(),
    };
    let context = store
        .span_text(&chain.evidence_hop1.chunk_id, chain.evidence_hop1.sentence_span)
        .ok_or_else(|| discard(chain, "hop-1 evidence does not resolve"))?;

    let mut r = rng(seed);
    let fillers = filler_candidates(chain, graph)?;
    let need = config.n_options - 2;
    if fillers.len() < need {
        return Err(discard(chain, format!("only {} distant filler entities, need {need}", fillers.len())));
    }
    let mut option_ids: Vec<&str> = vec![&chain.b, b_prime];
    let mut picked: Vec<usize> = index::sample(&mut r, fillers.len(), need).into_vec();
    picked.sort_unstable();
    option_ids.extend(picked.into_iter().map(|i| fillers[i]));
    option_ids.shuffle(&mut r);
    let answer_index = option_ids.iter().position(|id| *id == chain.b).expect("answer present");
    let hard_negative_index = option_ids.iter().position(|id| id == b_prime).expect("hard negative present");
    let options = option_ids.iter().map(|id| name(graph, id).map(str::to_string)).collect::<Result<Vec<_>>>()?;

    let a_name = name(graph, &chain.a)?;
    let b_name = name(graph, &chain.b)?;
    let mut last_problem = String::new();
    for attempt in 0..=config.max_retries {
        let payload = json!({
            "context_entity": a_name,
            "context": context,
            "target": b_name,
            "masked_terms": masked.surfaces().collect::<Vec<_>>(),
            "bridge_relation": chain.relations.0,
            "target_relation": chain.relations.1,
            "attempt": attempt,
            "language": config.language.as_str(),
        });
        let request = ChatRequest::new(config.model_name.clone(), config.temperature)
            .task(TASK_VIGNETTE, VIGNETTE_INSTRUCTIONS)
            .user(json_block(&payload))
            .with_seed(seed);
        let text = chat_complete(llm, None, &request, CachePolicy::Use)?;
        let Some(draft) = parse_json_lenient::<Draft>(&text).filter(|d| !d.question.trim().is_empty()) else {
            last_problem = "unparseable vignette reply".into();
            continue;
        };
        let item = QaItem {
            qa_id: format!("{}-{}", config.language.as_str().to_lowercase(), &sha256_hex(&chain.chain_id)[..12]),
            language: config.language,
            difficulty: config.difficulty,
            clinical_task: "unclassified".into(),
            question: draft.question.trim().to_string(),
            options: options.clone(),
            option_entities: option_ids.iter().map(|s| s.to_string()).collect(),
            answer_index,
            hard_negative_index,
            masked_entity: masked.clone(),
            rationale: draft.rationale.trim().to_string(),
            evidence_anchors: vec![
                EvidenceAnchor {
                    hop: Hop::Hop1,
                    evidence: chain.evidence_hop1.clone(),
                },
                EvidenceAnchor {
                    hop: Hop::Hop2,
                    evidence: chain.evidence_hop2.clone(),
                },
                EvidenceAnchor {
                    hop: Hop::Sibling,
                    evidence: ev_sib.clone(),
                },
            ],
            chain_ref: chain.chain_id.clone(),
            generation_metadata: GenerationMetadata {
                model: config.model_name.clone(),
                temperature: config.temperature,
                seed,
                attempts: attempt + 1,
            },
        };
        let leaks = verify_masking(&item);
        if leaks.is_empty() {
            return Ok(item);
        }
        log::debug!("{}: attempt {attempt} leaks {leaks:?}", chain.chain_id);
        last_problem = format!("question reveals masked term {:?}", leaks[0]);
    }
    Err(discard(chain, format!("{last_problem} after {} retries", config.max_retries)))
}
