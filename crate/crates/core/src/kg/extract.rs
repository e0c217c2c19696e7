//! LLM triplet extraction over tree nodes and assembly of the aligned graph.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::align::{align_maxmatch, align_tokens, damerau_levenshtein, fuzzy_merge, ThetaSchedule, TokenMode, Vocabulary};
use super::graph::{entity_frequencies, CountingUnit, Entity, Evidence, KnowledgeGraph, Triplet};
use crate::corpus::{CorpusStore, SentenceSpan};
use crate::exec::Execution;
use crate::hierarchy::{SummaryTree, SummaryTreeNode};
use crate::providers::mock::TASK_EXTRACT;
use crate::providers::{chat_complete, json_block, parse_json_lenient, CachePolicy, ChatProvider, ChatRequest};
use crate::text::{contains_surface, normalize_surface};
use crate::{Error, Result};

const EXTRACT_INSTRUCTIONS: &str = "Extract medical knowledge triplets (head entity, relation, tail entity) from the \
numbered sentences below. Use entity strings exactly as they appear in the text. Cite the chunk_id and the \
inclusive sentence_start/sentence_end indices of the sentences that state each relation. Reply with strict JSON \
only, of the form {\"triplets\": [{\"head\": \"...\", \"relation\": \"...\", \"tail\": \"...\", \"chunk_id\": \"...\", \
\"sentence_start\": 0, \"sentence_end\": 0, \"confidence\": 1.0}]}.";

const REASK: &str = "The previous reply was not valid JSON of the requested form. Reply again with the JSON object only.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub model_name: String,
    pub temperature: f64,
    pub max_sentences_per_prompt: usize,
    pub reasks: usize,
    pub seed: u64,
    pub counting_unit: CountingUnit,
    pub theta: ThetaSchedule,
    pub token_mode: TokenMode,
    pub execution: Execution,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            model_name: "mock".into(),
            temperature: 0.0,
            max_sentences_per_prompt: 40,
            reasks: 2,
            seed: 0,
            counting_unit: CountingUnit::TreeNodes,
            theta: ThetaSchedule::default(),
            token_mode: TokenMode::Word,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct RawTriplet {
    #[serde(default)]
    head: String,
    #[serde(default)]
    relation: String,
    #[serde(default)]
    tail: String,
    #[serde(default)]
    chunk_id: String,
    sentence_start: Option<usize>,
    sentence_end: Option<usize>,
    confidence: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawReply {
    triplets: Vec<RawTriplet>,
}

/// Evidence-checked triplet still keyed by surface strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTriplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub evidence: Evidence,
    pub confidence: f64,
    pub node_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub node_id: String,
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeExtraction {
    pub node_id: String,
    pub accepted: Vec<CandidateTriplet>,
    pub rejected: Vec<Rejection>,
}

/// Nodes extraction runs over: the first summary level, whose members are
/// leaf chunks; a tree without summary levels contributes each leaf.
pub fn extraction_nodes(tree: &SummaryTree) -> Vec<&SummaryTreeNode> {
    let level1: Vec<&SummaryTreeNode> = tree.at_level(1).collect();
    if level1.is_empty() {
        tree.at_level(0).collect()
    } else {
        level1
    }
}

fn validate(raw: &RawTriplet, node_id: &str, chunks: &BTreeSet<String>, store: &CorpusStore) -> std::result::Result<CandidateTriplet, String> {
    let (head, relation, tail) = (raw.head.trim(), raw.relation.trim(), raw.tail.trim());
    if head.is_empty() || tail.is_empty() || relation.is_empty() {
        return Err("empty head, relation or tail".into());
    }
    if normalize_surface(head) == normalize_surface(tail) {
        return Err("head equals tail".into());
    }
    if !chunks.contains(&raw.chunk_id) {
        return Err(format!("chunk {} is not part of the node", raw.chunk_id));
    }
    let (Some(start), Some(end)) = (raw.sentence_start, raw.sentence_end) else {
        return Err("missing sentence span".into());
    };
    let span = SentenceSpan::new(start, end);
    let text = store
        .span_text(&raw.chunk_id, span)
        .ok_or_else(|| format!("sentence span {start}..={end} does not resolve in {}", raw.chunk_id))?;
    if !contains_surface(&text, head) {
        return Err("head not found in cited span".into());
    }
    if !contains_surface(&text, tail) {
        return Err("tail not found in cited span".into());
    }
    Ok(CandidateTriplet {
        head: head.to_string(),
        relation: relation.to_string(),
        tail: tail.to_string(),
        evidence: Evidence {
            chunk_id: raw.chunk_id.clone(),
            sentence_span: span,
            page_anchor: store.page_of(&raw.chunk_id, span).unwrap_or(0),
        },
        confidence: raw.confidence.unwrap_or(1.0).clamp(0.0, 1.0),
        node_id: node_id.to_string(),
    })
}

/// Asks the chat provider for triplets over the node's leaf sentences and
/// keeps only those whose head and tail occur in the cited sentences.
pub fn extract_triplets(
    node: &SummaryTreeNode,
    tree: &SummaryTree,
    store: &CorpusStore,
    llm: &dyn ChatProvider,
    config: &ExtractionConfig,
) -> Result<NodeExtraction> {
    let chunk_ids: Vec<String> = tree.leaf_chunks(&node.node_id);
    let chunk_set: BTreeSet<String> = chunk_ids.iter().cloned().collect();
    let mut sentences = Vec::new();
    for id in &chunk_ids {
        let ss = store
            .chunk_sentences(id)
            .ok_or_else(|| Error::Extraction {
                node_id: node.node_id.clone(),
                reason: format!("member chunk {id} is not in the corpus store"),
            })?;
        for s in ss {
            if !s.text.trim().is_empty() {
                sentences.push(json!({ "chunk_id": id, "sentence_index": s.sentence_index, "text": s.text }));
            }
        }
    }
    let mut out = NodeExtraction {
        node_id: node.node_id.clone(),
        ..NodeExtraction::default()
    };
    for batch in sentences.chunks(config.max_sentences_per_prompt.max(1)) {
        let mut request = ChatRequest::new(config.model_name.clone(), config.temperature)
            .task(TASK_EXTRACT, EXTRACT_INSTRUCTIONS)
            .user(json_block(&json!({ "node_id": node.node_id, "sentences": batch })))
            .with_seed(config.seed);
        let mut reply = None;
        for attempt in 0..=config.reasks {
            let text = chat_complete(llm, None, &request, CachePolicy::Use)?;
            if let Some(parsed) = parse_json_lenient::<RawReply>(&text) {
                reply = Some(parsed);
                break;
            }
            debug!("{}: unparseable extraction reply on attempt {attempt}", node.node_id);
            request = request.message("assistant", text).user(REASK);
        }
        let reply = reply.ok_or_else(|| Error::Extraction {
            node_id: node.node_id.clone(),
            reason: format!("no valid JSON after {} re-asks", config.reasks),
        })?;
        for raw in reply.triplets {
            match validate(&raw, &node.node_id, &chunk_set, store) {
                Ok(t) => out.accepted.push(t),
                Err(reason) => {
                    debug!("{}: rejected ({} | {} | {}): {reason}", node.node_id, raw.head, raw.relation, raw.tail);
                    out.rejected.push(Rejection {
                        node_id: node.node_id.clone(),
                        head: raw.head,
                        relation: raw.relation,
                        tail: raw.tail,
                        reason,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub surfaces: usize,
    pub exact: usize,
    pub maxmatch: usize,
    pub fuzzy_merged: usize,
    pub new_entities: usize,
    pub self_loops_dropped: usize,
    /// Sampled `(a, b, c)` surface triples where OSA breaks the triangle inequality.
    pub triangle_violations: usize,
    pub triangle_samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub nodes: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub rejection_reasons: BTreeMap<String, usize>,
    pub failed_nodes: BTreeMap<String, String>,
    pub alignment: AlignmentReport,
    pub counting_unit: CountingUnit,
    pub frequencies_tree_nodes: BTreeMap<String, u64>,
    pub frequencies_mentions: BTreeMap<String, u64>,
}

/// Runs extraction on every extraction node; node failures are recorded and
/// skipped rather than aborting the stage.
pub fn extract_all(
    tree: &SummaryTree,
    store: &CorpusStore,
    llm: &dyn ChatProvider,
    config: &ExtractionConfig,
) -> Result<(Vec<NodeExtraction>, ExtractionReport)> {
    let nodes = extraction_nodes(tree);
    let results = config.execution.map(&nodes, |n| extract_triplets(n, tree, store, llm, config));
    let mut report = ExtractionReport {
        nodes: nodes.len(),
        counting_unit: config.counting_unit,
        ..ExtractionReport::default()
    };
    let mut out = Vec::new();
    for (node, r) in nodes.iter().zip(results) {
        match r {
            Ok(x) => {
                report.accepted += x.accepted.len();
                report.rejected += x.rejected.len();
                for rej in &x.rejected {
                    *report.rejection_reasons.entry(reason_class(&rej.reason)).or_default() += 1;
                }
                out.push(x);
            }
            Err(Error::Extraction { node_id, reason }) => {
                warn!("extraction failed for {node_id}: {reason}");
                report.failed_nodes.insert(node_id, reason);
            }
            Err(e) => {
                warn!("extraction aborted at {}: {e}", node.node_id);
                return Err(e);
            }
        }
    }
    Ok((out, report))
}

fn reason_class(reason: &str) -> String {
    if reason.starts_with("chunk ") {
        "chunk not in node".into()
    } else if reason.starts_with("sentence span") {
        "span does not resolve".into()
    } else {
        reason.to_string()
    }
}

struct Aligner<'a> {
    vocab: Vocabulary,
    entities: Vec<Entity>,
    seen_nodes: Vec<BTreeSet<String>>,
    theta: &'a ThetaSchedule,
    report: AlignmentReport,
}

impl Aligner<'_> {
    fn resolve(&mut self, surface: &str, node_id: &str) -> usize {
        self.report.surfaces += 1;
        let idx = if let Some(id) = self.vocab.lookup(surface) {
            self.report.exact += 1;
            Some(id.to_string())
        } else if let Some(id) = self.whole_maxmatch(surface) {
            self.report.maxmatch += 1;
            Some(id)
        } else if let Some(hit) = fuzzy_merge(surface, &self.vocab, self.theta) {
            self.report.fuzzy_merged += 1;
            debug!("merged `{surface}` into `{}` (DL {})", hit.surface, hit.distance);
            Some(hit.entity_id)
        } else {
            None
        };
        let i = match idx {
            Some(id) => id[1..].parse::<usize>().expect("entity ids are e<index>") - 1,
            None => {
                self.report.new_entities += 1;
                let id = format!("e{:05}", self.entities.len() + 1);
                self.entities.push(Entity {
                    entity_id: id,
                    canonical_name: surface.trim().to_string(),
                    aliases: BTreeSet::new(),
                    frequency: 0,
                    is_pruned: false,
                    prune_reason: None,
                });
                self.seen_nodes.push(BTreeSet::new());
                self.entities.len() - 1
            }
        };
        let e = &mut self.entities[i];
        let trimmed = surface.trim();
        if trimmed != e.canonical_name {
            e.aliases.insert(trimmed.to_string());
        }
        self.vocab.insert(trimmed, &e.entity_id);
        self.seen_nodes[i].insert(node_id.to_string());
        self.vocab.set_frequency(&e.entity_id, self.seen_nodes[i].len() as u64);
        i
    }

    /// A vocabulary entry spanning every token of `surface`.
    fn whole_maxmatch(&self, surface: &str) -> Option<String> {
        let tokens = align_tokens(surface, self.vocab.mode());
        let hits = align_maxmatch(surface, &self.vocab);
        match (tokens.first(), tokens.last(), hits.as_slice()) {
            (Some(first), Some(last), [only]) if only.char_span == (first.1, last.2) => Some(only.entity_id.clone()),
            _ => None,
        }
    }
}

const TRIANGLE_SAMPLE: usize = 40;

fn triangle_violations(names: &[&str]) -> (usize, usize) {
    let names = &names[..names.len().min(TRIANGLE_SAMPLE)];
    let n = names.len();
    let d: Vec<Vec<usize>> = names.iter().map(|a| names.iter().map(|b| damerau_levenshtein(a, b)).collect()).collect();
    let mut bad = 0;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                if d[a][c] > d[a][b] + d[b][c] {
                    bad += 1;
                }
            }
        }
    }
    (bad, n * n * n)
}

/// Aligns candidate surfaces to entities (exact, whole-span MaxMatch, then
/// fuzzy merge) and assembles the original-view graph.
pub fn build_graph(extractions: &[NodeExtraction], config: &ExtractionConfig, report: &mut ExtractionReport) -> Result<KnowledgeGraph> {
    config.theta.validate()?;
    let mut ordered: Vec<&NodeExtraction> = extractions.iter().collect();
    ordered.sort_by(|a, b| a.node_id.cmp(&b.node_id));
    let mut aligner = Aligner {
        vocab: Vocabulary::new(config.token_mode),
        entities: Vec::new(),
        seen_nodes: Vec::new(),
        theta: &config.theta,
        report: AlignmentReport::default(),
    };
    let mut edges = Vec::new();
    for x in ordered {
        for c in &x.accepted {
            let h = aligner.resolve(&c.head, &c.node_id);
            let t = aligner.resolve(&c.tail, &c.node_id);
            if h == t {
                aligner.report.self_loops_dropped += 1;
                continue;
            }
            edges.push(Triplet {
                head: aligner.entities[h].entity_id.clone(),
                relation: c.relation.clone(),
                tail: aligner.entities[t].entity_id.clone(),
                evidence: c.evidence.clone(),
                confidence: c.confidence,
                node_id: c.node_id.clone(),
                head_surface: c.head.clone(),
                tail_surface: c.tail.clone(),
            });
        }
    }
    let Aligner {
        mut entities,
        report: mut alignment,
        ..
    } = aligner;
    // a canonical name must not double as an alias
    for e in &mut entities {
        let canon = e.canonical_name.clone();
        e.aliases.remove(&canon);
    }
    let names: Vec<&str> = entities.iter().map(|e| e.canonical_name.as_str()).collect();
    (alignment.triangle_violations, alignment.triangle_samples) = triangle_violations(&names);
    if alignment.triangle_violations > 0 {
        warn!("{} sampled OSA triangle-inequality violations", alignment.triangle_violations);
    }
    report.frequencies_tree_nodes = entity_frequencies(&edges, CountingUnit::TreeNodes, None)?;
    report.frequencies_mentions = entity_frequencies(&edges, CountingUnit::Mentions, None)?;
    let freq = match config.counting_unit {
        CountingUnit::TreeNodes => &report.frequencies_tree_nodes,
        CountingUnit::Mentions => &report.frequencies_mentions,
    };
    for e in &mut entities {
        e.frequency = freq.get(&e.entity_id).copied().unwrap_or(0);
    }
    report.alignment = alignment;
    KnowledgeGraph::new(entities, edges, config.counting_unit)
}

/// Every surface a triplet was built from is a canonical name or alias of
/// the entity it resolved to.
pub fn check_alias_closure(graph: &KnowledgeGraph) -> Result<()> {
    for t in &graph.edges {
        for (id, surface) in [(&t.head, &t.head_surface), (&t.tail, &t.tail_surface)] {
            let e = graph
                .entity(id)
                .ok_or_else(|| Error::validation(format!("edge references unknown entity {id}")))?;
            let key = normalize_surface(surface);
            if !e.surfaces().any(|s| normalize_surface(s) == key) {
                return Err(Error::validation(format!("surface `{surface}` is not recorded on {id}")));
            }
        }
    }
    Ok(())
}
