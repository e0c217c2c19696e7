//! Bottom-up construction of the soft-clustered summary tree.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::gmm::{select_cluster_count, BicPoint, EmConfig, SelectionConfig};
use super::projection::{reduce_dimensions, PcaProjector};
use crate::corpus::Chunk;
use crate::exec::Execution;
use crate::providers::mock::TASK_SUMMARIZE;
use crate::providers::{chat_complete, embed_texts, json_block, CachePolicy, ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector};
use crate::seed::derive_seed;
use crate::{Error, Result};

const SUMMARY_INSTRUCTIONS: &str = "You are given passages from medical reference texts that belong to one topical \
cluster. Write a concise abstract summary (at most 200 words) that preserves the key entities and the relations \
stated between them. Do not add facts that are not in the passages. Reply with the summary text only.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub target_dim: usize,
    pub k_max: usize,
    pub n_restarts: usize,
    pub membership_floor: f64,
    pub max_levels: usize,
    /// Passages per summarization prompt, highest membership weight first.
    pub max_passages: usize,
    pub model_name: String,
    pub temperature: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            target_dim: 10,
            k_max: 50,
            n_restarts: 4,
            membership_floor: 0.10,
            max_levels: 4,
            max_passages: 24,
            model_name: "mock".into(),
            temperature: 0.0,
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_dim == 0 || self.k_max == 0 || self.n_restarts == 0 || self.max_passages == 0 {
            return Err(Error::validation("tree settings must be positive"));
        }
        if !(0.0..=1.0).contains(&self.membership_floor) {
            return Err(Error::validation("membership_floor must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTreeNode {
    pub node_id: String,
    pub level: usize,
    pub member_ids: Vec<Member>,
    pub summary_text: String,
    pub cluster_model_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub n_inputs: usize,
    pub target_dim: usize,
    pub projector_id: String,
    pub rank_correlation: f64,
    pub k_star: usize,
    pub bic_curve: Vec<BicPoint>,
    pub likelihood_trace: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTree {
    pub nodes: Vec<SummaryTreeNode>,
    pub levels: Vec<LevelReport>,
}

impl SummaryTree {
    pub fn node(&self, id: &str) -> Option<&SummaryTreeNode> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn at_level(&self, level: usize) -> impl Iterator<Item = &SummaryTreeNode> {
        self.nodes.iter().filter(move |n| n.level == level)
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    /// Leaf chunk ids reachable from `node_id` (the node itself for a leaf).
    pub fn leaf_chunks(&self, node_id: &str) -> Vec<String> {
        let index: BTreeMap<&str, &SummaryTreeNode> = self.nodes.iter().map(|n| (n.node_id.as_str(), n)).collect();
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![node_id];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            match index.get(id) {
                Some(n) if n.level == 0 => out.push(id.to_string()),
                Some(n) => stack.extend(n.member_ids.iter().rev().map(|m| m.id.as_str())),
                None => {}
            }
        }
        out.sort();
        out
    }

    /// Checks level monotonicity, member resolution and per-child weight sums.
    pub fn check_invariants(&self) -> Result<()> {
        let index: BTreeMap<&str, &SummaryTreeNode> = self.nodes.iter().map(|n| (n.node_id.as_str(), n)).collect();
        if index.len() != self.nodes.len() {
            return Err(Error::validation("duplicate node ids in tree"));
        }
        let mut weight_sums: BTreeMap<&str, f64> = BTreeMap::new();
        for n in &self.nodes {
            for m in &n.member_ids {
                let child = index
                    .get(m.id.as_str())
                    .ok_or_else(|| Error::validation(format!("{} references unknown member {}", n.node_id, m.id)))?;
                if child.level >= n.level {
                    return Err(Error::validation(format!("{} is not below its parent {}", m.id, n.node_id)));
                }
                *weight_sums.entry(m.id.as_str()).or_default() += m.weight;
            }
        }
        if let Some((id, w)) = weight_sums.iter().find(|(_, w)| **w > 1.0 + 1e-9) {
            return Err(Error::validation(format!("membership weights of {id} sum to {w}")));
        }
        Ok(())
    }
}

/// Tree build that failed part way; `partial` holds every completed level.
#[derive(Debug)]
pub struct TreeBuildFailure {
    pub partial: SummaryTree,
    pub error: Error,
}

impl From<Box<TreeBuildFailure>> for Error {
    fn from(f: Box<TreeBuildFailure>) -> Self {
        Error::Stage {
            stage: "tree".into(),
            source: Box::new(f.error),
        }
    }
}

/// Projection dimension actually used for `n` inputs of `source_dim`: small
/// inputs get few dimensions so that up to four clusters can each support a
/// full covariance (at least `d + 1` members).
fn effective_dim(target: usize, source_dim: usize, n: usize) -> usize {
    target.min(source_dim.saturating_sub(1)).min((n / 4).saturating_sub(1)).max(1)
}

struct LevelInput {
    id: String,
    text: String,
    embedding: EmbeddingVector,
}

pub fn build_summary_tree(
    chunks: &[Chunk],
    llm: &dyn ChatProvider,
    embedder: &dyn EmbeddingProvider,
    config: &TreeConfig,
) -> Result<SummaryTree, Box<TreeBuildFailure>> {
    let fail = |partial: &SummaryTree, error: Error| {
        Box::new(TreeBuildFailure {
            partial: partial.clone(),
            error,
        })
    };
    let mut tree = SummaryTree::default();
    if let Err(e) = config.validate() {
        return Err(fail(&tree, e));
    }
    if chunks.is_empty() {
        return Err(fail(&tree, Error::validation("build_summary_tree needs at least one chunk")));
    }
    tree.nodes = chunks
        .iter()
        .map(|c| SummaryTreeNode {
            node_id: c.chunk_id.clone(),
            level: 0,
            member_ids: Vec::new(),
            summary_text: String::new(),
            cluster_model_ref: None,
        })
        .collect();
    let mut current: Vec<LevelInput> = chunks
        .iter()
        .map(|c| LevelInput {
            id: c.chunk_id.clone(),
            text: c.text.clone(),
            embedding: c.embedding.clone(),
        })
        .collect();

    for level in 1..=config.max_levels {
        if current.len() <= 2 {
            break;
        }
        match build_level(level, &current, llm, embedder, config) {
            Ok(None) => break,
            Ok(Some((nodes, report, next))) => {
                let single_root = nodes.len() == 1;
                tree.nodes.extend(nodes);
                tree.levels.push(report);
                current = next;
                if single_root {
                    break;
                }
            }
            Err(e) => return Err(fail(&tree, e)),
        }
    }
    Ok(tree)
}

type LevelOutput = (Vec<SummaryTreeNode>, LevelReport, Vec<LevelInput>);

fn build_level(
    level: usize,
    inputs: &[LevelInput],
    llm: &dyn ChatProvider,
    embedder: &dyn EmbeddingProvider,
    config: &TreeConfig,
) -> Result<Option<LevelOutput>> {
    let n = inputs.len();
    let source_dim = inputs[0].embedding.values.len();
    let dim = effective_dim(config.target_dim, source_dim, n);
    let ids: Vec<String> = inputs.iter().map(|i| i.id.clone()).collect();
    let vectors: Vec<EmbeddingVector> = inputs.iter().map(|i| i.embedding.clone()).collect();
    let projector = PcaProjector::new(derive_seed(config.seed, "projection", &level.to_string()));
    let projection = reduce_dimensions(&ids, &vectors, dim, &projector)?;
    let selection = select_cluster_count(
        &projection.points,
        config.k_max.min(n - 1),
        derive_seed(config.seed, "tree", &level.to_string()),
        &SelectionConfig {
            n_restarts: config.n_restarts,
            em: EmConfig::default(),
            execution: config.execution,
        },
    )?;
    let k = selection.k_star;
    if k >= n {
        return Ok(None);
    }

    // soft membership: every γ ≥ floor, plus the argmax so nobody is orphaned
    let mut clusters: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    for (i, row) in selection.assignment.gamma.iter().enumerate() {
        let best = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(j, _)| j);
        for (j, &g) in row.iter().enumerate() {
            if g >= config.membership_floor || j == best {
                clusters[j].push((i, g));
            }
        }
    }
    clusters.retain(|c| !c.is_empty());

    let summaries = config.execution.map(&clusters, |members| {
        let mut ordered = members.clone();
        ordered.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let passages: Vec<&str> = ordered
            .iter()
            .take(config.max_passages)
            .map(|(i, _)| inputs[*i].text.as_str())
            .collect();
        let request = ChatRequest::new(config.model_name.clone(), config.temperature)
            .task(TASK_SUMMARIZE, SUMMARY_INSTRUCTIONS)
            .user(json_block(&json!({ "passages": passages })))
            .with_seed(config.seed);
        chat_complete(llm, None, &request, CachePolicy::Use)
    });
    let summaries = summaries.into_iter().collect::<Result<Vec<_>>>()?;
    let embeddings = embed_texts(embedder, &summaries)?;

    let mut nodes = Vec::with_capacity(clusters.len());
    let mut next = Vec::with_capacity(clusters.len());
    for (j, ((members, summary), embedding)) in clusters.iter().zip(summaries).zip(embeddings).enumerate() {
        let node_id = format!("L{level}-{j:03}");
        nodes.push(SummaryTreeNode {
            node_id: node_id.clone(),
            level,
            member_ids: members
                .iter()
                .map(|(i, w)| Member {
                    id: inputs[*i].id.clone(),
                    weight: *w,
                })
                .collect(),
            summary_text: summary.clone(),
            cluster_model_ref: Some(format!("level{level}/k{j}")),
        });
        next.push(LevelInput {
            id: node_id,
            text: summary,
            embedding,
        });
    }
    let report = LevelReport {
        level,
        n_inputs: n,
        target_dim: dim,
        projector_id: projection.points[0].projector_id.clone(),
        rank_correlation: projection.rank_correlation,
        k_star: k,
        bic_curve: selection.curve,
        likelihood_trace: selection.best.iteration_trace,
        converged: selection.best.converged,
    };
    Ok(Some((nodes, report, next)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentenceSpan;
    use crate::providers::mock::{MockChat, MockEmbedder};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting<P>(P, AtomicUsize);

    impl<P: ChatProvider> ChatProvider for Counting<P> {
        fn provider_id(&self) -> String {
            self.0.provider_id()
        }
        fn complete(&self, r: &ChatRequest) -> Result<String> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.complete(r)
        }
    }

    struct Failing;

    impl ChatProvider for Failing {
        fn provider_id(&self) -> String {
            "failing".into()
        }
        fn complete(&self, _: &ChatRequest) -> Result<String> {
            Err(Error::ProviderFault("service unavailable".into()))
        }
    }

    fn chunks(texts: &[&str], embedder: &MockEmbedder) -> Vec<Chunk> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Chunk {
                chunk_id: format!("d#c{i:04}"),
                doc_id: "d".into(),
                sentence_span: SentenceSpan::new(i, i),
                text: t.to_string(),
                page_anchor: 1,
                embedding: embed_texts(embedder, &[t.to_string()]).unwrap().remove(0),
            })
            .collect()
    }

    const CARDIO: [&str; 6] = [
        "Hypertension raises cardiac afterload and stroke risk.",
        "Cardiac afterload rises with hypertension and arterial stiffness.",
        "Stroke risk grows with untreated hypertension.",
        "Arterial stiffness increases cardiac afterload in hypertension.",
        "Hypertension and stroke share arterial stiffness.",
        "Untreated hypertension strains cardiac muscle and arteries.",
    ];
    const RENAL: [&str; 6] = [
        "Glomerular filtration falls in chronic kidney disease.",
        "Kidney disease lowers glomerular filtration and urine output.",
        "Proteinuria signals glomerular kidney damage.",
        "Chronic kidney damage reduces urine concentration.",
        "Glomerular proteinuria marks chronic kidney disease.",
        "Urine output drops as glomerular filtration declines.",
    ];

    #[test]
    fn single_chunk_no_calls() {
        let e = MockEmbedder::new(32, 1);
        let chat = Counting(MockChat::new(1), AtomicUsize::new(0));
        let tree = build_summary_tree(&chunks(&["Only one."], &e), &chat, &e, &TreeConfig::default()).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.depth(), 0);
        assert_eq!(chat.1.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn two_topics_two_parents() {
        let e = MockEmbedder::new(64, 3);
        let texts: Vec<&str> = CARDIO.iter().chain(RENAL.iter()).copied().collect();
        let cs = chunks(&texts, &e);
        let chat = MockChat::new(3);
        let config = TreeConfig {
            target_dim: 2,
            ..TreeConfig::default()
        };
        let tree = build_summary_tree(&cs, &chat, &e, &config).unwrap();
        tree.check_invariants().unwrap();
        let level1: Vec<_> = tree.at_level(1).collect();
        assert_eq!(level1.len(), 2, "{:?}", tree.levels[0].bic_curve);
        for node in level1 {
            let heavy: Vec<usize> = node
                .member_ids
                .iter()
                .filter(|m| m.weight > 0.5)
                .map(|m| m.id[3..].parse::<usize>().unwrap())
                .collect();
            assert!(heavy.iter().all(|&i| i < 6) || heavy.iter().all(|&i| i >= 6), "mixed cluster {heavy:?}");
            assert!(node.summary_text.starts_with("Summary of"));
        }
    }

    #[test]
    fn provider_failure_keeps_partial() {
        let e = MockEmbedder::new(64, 3);
        let texts: Vec<&str> = CARDIO.iter().chain(RENAL.iter()).copied().collect();
        let err = build_summary_tree(&chunks(&texts, &e), &Failing, &e, &TreeConfig::default()).unwrap_err();
        assert_eq!(err.partial.nodes.len(), 12);
        assert!(matches!(err.error, Error::ProviderFault(_)));
        let as_error: Error = err.into();
        assert_eq!(as_error.exit_code(), 4);
    }

    #[test]
    fn invariants_reject_bad_weights() {
        let leaf = |id: &str| SummaryTreeNode {
            node_id: id.into(),
            level: 0,
            member_ids: vec![],
            summary_text: String::new(),
            cluster_model_ref: None,
        };
        let parent = |id: &str, w: f64| SummaryTreeNode {
            node_id: id.into(),
            level: 1,
            member_ids: vec![Member { id: "a".into(), weight: w }],
            summary_text: "s".into(),
            cluster_model_ref: None,
        };
        let ok = SummaryTree {
            nodes: vec![leaf("a"), parent("p", 0.6), parent("q", 0.4)],
            levels: vec![],
        };
        ok.check_invariants().unwrap();
        assert_eq!(ok.leaf_chunks("p"), vec!["a".to_string()]);
        let bad = SummaryTree {
            nodes: vec![leaf("a"), parent("p", 0.6), parent("q", 0.5)],
            levels: vec![],
        };
        assert!(bad.check_invariants().is_err());
    }
}
