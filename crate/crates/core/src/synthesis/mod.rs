//! Two-hop chain mining, sibling hard negatives, masked vignette synthesis,
//! lexical statistics and ensemble quality adjudication.

pub mod adjudicate;
pub mod stats;
pub mod vignette;

use std::collections::BTreeMap;

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{Evidence, KnowledgeGraph, View};
use crate::seed::rng;
use crate::text::{contains_surface, Language};
use crate::{Error, Result};

pub use adjudicate::{adjudicate_quality, Adjudication, Adjudicator};
pub use stats::{bleu1, compute_overlap_stats, rouge1_f1, DatasetStats};
pub use vignette::{synthesize_item, SynthesisConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub chain_id: String,
    pub a: String,
    pub e_bridge: String,
    pub b: String,
    /// Relations of the two hops, `A → e_bridge` then `e_bridge → B`.
    pub relations: (String, String),
    pub e_sib: Option<String>,
    pub b_prime: Option<String>,
    pub evidence_hop1: Evidence,
    pub evidence_hop2: Evidence,
    /// Evidence of the `e_sib → B′` edge.
    pub evidence_sibling: Option<Evidence>,
}

impl ReasoningChain {
    pub fn is_complete(&self) -> bool {
        self.e_sib.is_some() && self.b_prime.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningLimits {
    /// Chains kept per source entity `A`, in enumeration order.
    pub per_source: Option<usize>,
    pub total: Option<usize>,
}

impl Default for MiningLimits {
    fn default() -> Self {
        MiningLimits {
            per_source: Some(20),
            total: None,
        }
    }
}

fn first_evidence(graph: &KnowledgeGraph, head: &str, tail: &str) -> Option<(String, Evidence)> {
    graph
        .edges_between(head, tail)
        .next()
        .map(|t| (t.relation.clone(), t.evidence.clone()))
}

/// Every directed path `A → e → B` with `A ≠ B` in the shattered view.
pub fn mine_chains(graph: &KnowledgeGraph, limits: &MiningLimits) -> Result<Vec<ReasoningChain>> {
    if graph.view != View::Shattered {
        return Err(Error::validation("chains are mined from the shattered view"));
    }
    let mut out = Vec::new();
    for a in graph.active_entities() {
        let mut from_a = 0;
        for e in graph.successors(&a.entity_id) {
            for b in graph.successors(e) {
                if b == a.entity_id || limits.per_source.is_some_and(|cap| from_a >= cap) {
                    continue;
                }
                let (Some((r1, ev1)), Some((r2, ev2))) = (first_evidence(graph, &a.entity_id, e), first_evidence(graph, e, b)) else {
                    continue;
                };
                out.push(ReasoningChain {
                    chain_id: format!("{}>{}>{}", a.entity_id, e, b),
                    a: a.entity_id.clone(),
                    e_bridge: e.to_string(),
                    b: b.to_string(),
                    relations: (r1, r2),
                    e_sib: None,
                    b_prime: None,
                    evidence_hop1: ev1,
                    evidence_hop2: ev2,
                    evidence_sibling: None,
                });
                from_a += 1;
                if limits.total.is_some_and(|cap| out.len() >= cap) {
                    return Ok(out);
                }
            }
        }
    }
    Ok(out)
}

/// Valid `(e_sib, [B′])` pairs for a chain, in graph order.
pub fn sibling_candidates<'g>(chain: &ReasoningChain, graph: &'g KnowledgeGraph) -> Vec<(&'g str, Vec<&'g str>)> {
    graph
        .successors(&chain.a)
        .into_iter()
        .filter(|e| *e != chain.e_bridge)
        .filter_map(|e| {
            let targets: Vec<&str> = graph
                .successors(e)
                .into_iter()
                .filter(|b| ![chain.a.as_str(), chain.e_bridge.as_str(), chain.b.as_str()].contains(b))
                .collect();
            (!targets.is_empty()).then_some((e, targets))
        })
        .collect()
}

/// Picks a sibling branch `A → e_sib → B′` uniformly at random (seeded),
/// first over siblings, then over that sibling's admissible targets.
pub fn sample_hard_negative(chain: &ReasoningChain, graph: &KnowledgeGraph, seed: u64) -> Result<ReasoningChain> {
    let candidates = sibling_candidates(chain, graph);
    if candidates.is_empty() {
        debug!("{}: no sibling branch", chain.chain_id);
        return Err(Error::NoHardNegative {
            chain_id: chain.chain_id.clone(),
            reason: format!("{} has no sibling of {} with an admissible target", chain.a, chain.e_bridge),
        });
    }
    let mut r = rng(seed);
    let (sib, targets) = &candidates[r.random_range(0..candidates.len())];
    let b_prime = targets[r.random_range(0..targets.len())];
    let (_, evidence) = first_evidence(graph, sib, b_prime).expect("sibling edge exists");
    let mut out = chain.clone();
    out.e_sib = Some(sib.to_string());
    out.b_prime = Some(b_prime.to_string());
    out.evidence_sibling = Some(evidence);
    Ok(out)
}

/// Checks the sibling-branch edges of a completed chain against `graph`.
pub fn check_hard_negative(chain: &ReasoningChain, graph: &KnowledgeGraph) -> Result<()> {
    let (Some(sib), Some(bp)) = (&chain.e_sib, &chain.b_prime) else {
        return Err(Error::validation(format!("{} has no hard negative", chain.chain_id)));
    };
    let ok = graph.has_edge(&chain.a, &chain.e_bridge)
        && graph.has_edge(&chain.e_bridge, &chain.b)
        && graph.has_edge(&chain.a, sib)
        && graph.has_edge(sib, bp)
        && *sib != chain.e_bridge
        && ![&chain.a, &chain.e_bridge, &chain.b].contains(&bp);
    if ok {
        Ok(())
    } else {
        Err(Error::validation(format!("{} violates the sibling-branch topology", chain.chain_id)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedEntity {
    pub entity_id: String,
    pub canonical: String,
    pub aliases: Vec<String>,
}

impl MaskedEntity {
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hop {
    Hop1,
    Hop2,
    Sibling,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceAnchor {
    pub hop: Hop,
    #[serde(flatten)]
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetadata {
    pub model: String,
    pub temperature: f64,
    pub seed: u64,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub qa_id: String,
    pub language: Language,
    pub difficulty: Difficulty,
    /// Taxonomy label; `unclassified` until adjudication assigns one.
    pub clinical_task: String,
    pub question: String,
    pub options: Vec<String>,
    /// Entity id behind each option, same order as `options`.
    pub option_entities: Vec<String>,
    pub answer_index: usize,
    pub hard_negative_index: usize,
    pub masked_entity: MaskedEntity,
    pub rationale: String,
    pub evidence_anchors: Vec<EvidenceAnchor>,
    pub chain_ref: String,
    pub generation_metadata: GenerationMetadata,
}

impl QaItem {
    pub fn anchor(&self, hop: Hop) -> Option<&Evidence> {
        self.evidence_anchors.iter().find(|a| a.hop == hop).map(|a| &a.evidence)
    }

    /// Option-integrity and masking invariants.
    pub fn check(&self) -> Result<()> {
        let n = self.options.len();
        if self.answer_index >= n || self.hard_negative_index >= n || self.answer_index == self.hard_negative_index {
            return Err(Error::validation(format!("{}: answer/hard-negative indices invalid", self.qa_id)));
        }
        if self.option_entities.len() != n {
            return Err(Error::validation(format!("{}: one entity per option required", self.qa_id)));
        }
        let violations = verify_masking(self);
        if !violations.is_empty() {
            return Err(Error::validation(format!("{}: question reveals {violations:?}", self.qa_id)));
        }
        Ok(())
    }
}

/// Surface forms of the masked bridge entity found in the question text.
pub fn verify_masking(item: &QaItem) -> Vec<String> {
    item.masked_entity
        .surfaces()
        .filter(|s| contains_surface(&item.question, s))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discard {
    pub chain_id: String,
    pub stage: String,
    pub reason: String,
}

/// Counts discards by reason for reports.
pub fn discard_summary(discards: &[Discard]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for d in discards {
        *m.entry(format!("{}: {}", d.stage, d.reason)).or_default() += 1;
    }
    m
}


#[cfg(test)]
mod tests {
    use super::fixtures::branch_graph;
    use super::*;
    use crate::kg::graph::fixtures::graph;
    use crate::kg::{shatter, KThreshold, Stoplist};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn shattered(nodes: &[&str], edges: &[(&str, &str)]) -> KnowledgeGraph {
        shatter(&graph(nodes, edges), KThreshold::Infinite, &Stoplist::default())
    }

    #[test]
    fn triangle_has_one_chain() {
        let g = shattered(&["a", "b", "c"], &[("a", "b"), ("b", "c"), ("a", "c")]);
        let chains = mine_chains(&g, &MiningLimits::default()).unwrap();
        let triples: Vec<(&str, &str, &str)> = chains.iter().map(|c| (c.a.as_str(), c.e_bridge.as_str(), c.b.as_str())).collect();
        assert_eq!(triples, [("a", "b", "c")]);
    }

    #[test]
    fn original_view_rejected() {
        let g = graph(&["a", "b"], &[("a", "b")]);
        assert!(mine_chains(&g, &MiningLimits::default()).is_err());
    }

    #[test]
    fn toy_bridge_chain_found() {
        let g = branch_graph();
        let chains = mine_chains(&g, &MiningLimits::default()).unwrap();
        assert!(chains.iter().any(|c| c.a == "Type 2 Diabetes" && c.e_bridge == "AGEs Accumulation" && c.b == "Osteoblast suppression"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn chains_match_triple_scan(n in 2usize..15, raw in proptest::collection::vec((0usize..15, 0usize..15), 0..40)) {
            // DAG: only edges from lower to higher index
            let names: Vec<String> = (0..n).map(|i| format!("v{i:02}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let mut pairs = BTreeSet::new();
            for (a, b) in raw {
                let (a, b) = (a % n, b % n);
                if a < b {
                    pairs.insert((a, b));
                }
            }
            let edges: Vec<(&str, &str)> = pairs.iter().map(|&(a, b)| (refs[a], refs[b])).collect();
            let g = shattered(&refs, &edges);
            let mined: BTreeSet<(String, String, String)> = mine_chains(&g, &MiningLimits { per_source: None, total: None })
                .unwrap()
                .into_iter()
                .map(|c| (c.a, c.e_bridge, c.b))
                .collect();
            let mut oracle = BTreeSet::new();
            for a in 0..n {
                for e in 0..n {
                    for b in 0..n {
                        if a != b && pairs.contains(&(a, e)) && pairs.contains(&(e, b)) {
                            oracle.insert((names[a].clone(), names[e].clone(), names[b].clone()));
                        }
                    }
                }
            }
            prop_assert_eq!(mined, oracle);
        }
    }

    #[test]
    fn caps_limit_output() {
        let g = shattered(&["a", "b", "c", "d"], &[("a", "b"), ("b", "c"), ("b", "d")]);
        let capped = mine_chains(&g, &MiningLimits { per_source: Some(1), total: None }).unwrap();
        assert_eq!(capped.len(), 1);
        let total = mine_chains(&g, &MiningLimits { per_source: None, total: Some(1) }).unwrap();
        assert_eq!(total.len(), 1);
    }

    fn diabetes_chain(g: &KnowledgeGraph) -> ReasoningChain {
        mine_chains(g, &MiningLimits::default())
            .unwrap()
            .into_iter()
            .find(|c| c.a == "Type 2 Diabetes" && c.e_bridge == "AGEs Accumulation")
            .unwrap()
    }

    #[test]
    fn sorbitol_sibling_selected() {
        let g = branch_graph();
        let chain = sample_hard_negative(&diabetes_chain(&g), &g, 7).unwrap();
        assert_eq!(chain.e_sib.as_deref(), Some("Sorbitol Accumulation"));
        assert_eq!(chain.b_prime.as_deref(), Some("Schwann Cell Damage"));
        check_hard_negative(&chain, &g).unwrap();
        for seed in 0..20 {
            assert_eq!(sample_hard_negative(&diabetes_chain(&g), &g, seed).unwrap(), chain);
        }
    }

    #[test]
    fn out_degree_one_has_no_sibling() {
        let g = shattered(&["a", "b", "c"], &[("a", "b"), ("b", "c")]);
        let chain = mine_chains(&g, &MiningLimits::default()).unwrap().remove(0);
        assert!(matches!(sample_hard_negative(&chain, &g, 0), Err(Error::NoHardNegative { .. })));
    }

    #[test]
    fn sibling_targets_exclude_chain_nodes() {
        // the only sibling target is B itself, so no hard negative exists
        let g = shattered(&["a", "e", "b", "s"], &[("a", "e"), ("e", "b"), ("a", "s"), ("s", "b"), ("s", "a")]);
        let chain = mine_chains(&g, &MiningLimits::default())
            .unwrap()
            .into_iter()
            .find(|c| c.e_bridge == "e")
            .unwrap();
        assert!(sample_hard_negative(&chain, &g, 0).is_err());
    }

    #[test]
    fn sibling_sampling_is_seed_deterministic() {
        let g = shattered(
            &["a", "e", "b", "s1", "s2", "x", "y", "z"],
            &[("a", "e"), ("e", "b"), ("a", "s1"), ("a", "s2"), ("s1", "x"), ("s1", "y"), ("s2", "z")],
        );
        let chain = mine_chains(&g, &MiningLimits::default()).unwrap().into_iter().find(|c| c.b == "b").unwrap();
        let mut seen = BTreeSet::new();
        for seed in 0..64 {
            let a = sample_hard_negative(&chain, &g, seed).unwrap();
            assert_eq!(a, sample_hard_negative(&chain, &g, seed).unwrap());
            check_hard_negative(&a, &g).unwrap();
            seen.insert(a.b_prime.unwrap());
        }
        assert_eq!(seen.len(), 3);
    }

    fn item(question: &str, aliases: &[&str]) -> QaItem {
        QaItem {
            qa_id: "q".into(),
            language: Language::En,
            difficulty: Difficulty::Hard,
            clinical_task: "unclassified".into(),
            question: question.into(),
            options: vec!["x".into(), "y".into(), "z".into()],
            option_entities: vec!["1".into(), "2".into(), "3".into()],
            answer_index: 0,
            hard_negative_index: 1,
            masked_entity: MaskedEntity {
                entity_id: "e".into(),
                canonical: "AGEs Accumulation".into(),
                aliases: aliases.iter().map(|s| s.to_string()).collect(),
            },
            rationale: "AGEs Accumulation explains it".into(),
            evidence_anchors: vec![],
            chain_ref: "c".into(),
            generation_metadata: GenerationMetadata {
                model: "m".into(),
                temperature: 0.0,
                seed: 0,
                attempts: 1,
            },
        }
    }

    #[test]
    fn masking_rules() {
        assert_eq!(verify_masking(&item("Signs of AGEs accumulation appear.", &[])), ["AGEs Accumulation"]);
        assert!(verify_masking(&item("Glycation products build up in bone.", &[])).is_empty());
        let aliased = item("Advanced glycation end-products are raised.", &["advanced glycation end-products"]);
        assert_eq!(verify_masking(&aliased), ["advanced glycation end-products"]);
        assert!(item("Glycation products build up.", &[]).check().is_ok());
        assert!(aliased.check().is_err());
    }
}
