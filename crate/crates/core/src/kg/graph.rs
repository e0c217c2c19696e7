//! The entity graph, hub pruning and hop-distance analytics.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::SentenceSpan;
use crate::exec::Execution;
use crate::text::{normalize_surface, sha256_hex};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneReason {
    OverK,
    Stoplist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub entity_id: String,
    pub canonical_name: String,
    pub aliases: BTreeSet<String>,
    pub frequency: u64,
    pub is_pruned: bool,
    pub prune_reason: Option<PruneReason>,
}

impl Entity {
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub chunk_id: String,
    pub sentence_span: SentenceSpan,
    pub page_anchor: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub evidence: Evidence,
    pub confidence: f64,
    /// Tree node the triplet was extracted from.
    pub node_id: String,
    pub head_surface: String,
    pub tail_surface: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Original,
    Shattered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KThreshold {
    Finite(u64),
    Infinite,
}

impl KThreshold {
    pub fn exceeded_by(self, frequency: u64) -> bool {
        match self {
            KThreshold::Finite(k) => frequency > k,
            KThreshold::Infinite => false,
        }
    }
}

impl fmt::Display for KThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KThreshold::Finite(k) => write!(f, "{k}"),
            KThreshold::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for KThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(KThreshold::Infinite),
            t => t
                .parse::<u64>()
                .ok()
                .filter(|k| *k > 0)
                .map(KThreshold::Finite)
                .ok_or_else(|| Error::validation(format!("k must be a positive integer or `inf`, got `{s}`"))),
        }
    }
}

/// Parses a comma-separated list such as `10,50,100,inf`.
pub fn parse_k_list(s: &str) -> Result<Vec<KThreshold>> {
    s.split(',').map(str::parse).collect()
}

impl Serialize for KThreshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KThreshold::Finite(k) => s.serialize_u64(*k),
            KThreshold::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for KThreshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(0) => Err(serde::de::Error::custom("k must be positive")),
            Raw::N(k) => Ok(KThreshold::Finite(k)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stoplist {
    pub terms: BTreeSet<String>,
}

impl Stoplist {
    /// One term per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        Stoplist {
            terms: text
                .lines()
                .map(|l| normalize_surface(l.split('#').next().unwrap_or("")))
                .filter(|l| !l.is_empty())
                .collect(),
        }
    }

    pub fn from_terms<I: IntoIterator<Item = S>, S: AsRef<str>>(terms: I) -> Self {
        Stoplist {
            terms: terms.into_iter().map(|t| normalize_surface(t.as_ref())).filter(|t| !t.is_empty()).collect(),
        }
    }

    pub fn matches(&self, surface: &str) -> bool {
        self.terms.contains(&normalize_surface(surface))
    }

    pub fn id(&self) -> String {
        let joined: Vec<&str> = self.terms.iter().map(String::as_str).collect();
        sha256_hex(joined.join("\n"))[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingUnit {
    Mentions,
    #[default]
    TreeNodes,
}

pub fn entity_frequencies(
    triplets: &[Triplet],
    unit: CountingUnit,
    known: Option<&BTreeSet<String>>,
) -> Result<BTreeMap<String, u64>> {
    let mut mentions: BTreeMap<String, u64> = BTreeMap::new();
    let mut nodes: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for t in triplets {
        for id in [&t.head, &t.tail] {
            if known.is_some_and(|k| !k.contains(id)) {
                return Err(Error::validation(format!("triplet references unknown entity {id}")));
            }
            *mentions.entry(id.clone()).or_default() += 1;
            nodes.entry(id.clone()).or_default().insert(&t.node_id);
        }
    }
    Ok(match unit {
        CountingUnit::Mentions => mentions,
        CountingUnit::TreeNodes => nodes.into_iter().map(|(id, n)| (id, n.len() as u64)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub entities: Vec<Entity>,
    pub edges: Vec<Triplet>,
    pub view: View,
    pub k_threshold: KThreshold,
    pub stoplist_id: String,
    pub counting_unit: CountingUnit,
    #[serde(skip)]
    index: GraphIndex,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct GraphIndex {
    position: HashMap<String, usize>,
    /// Directed successors (deduplicated, sorted by position).
    out: Vec<Vec<usize>>,
    /// Undirected skeleton neighbours.
    undirected: Vec<Vec<usize>>,
}

/// Tagged record of `graph.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphRecord {
    Meta {
        view: View,
        k_threshold: KThreshold,
        stoplist_id: String,
        counting_unit: CountingUnit,
    },
    Entity(Entity),
    Edge(Triplet),
}

impl KnowledgeGraph {
    /// Graph whose entity ids are their names, every frequency 1 and every
    /// edge labelled "related to"; for synthetic analyses.
    pub fn from_edge_list(nodes: &[&str], edges: &[(&str, &str)]) -> Result<Self> {
        let entities = nodes
            .iter()
            .map(|n| Entity {
                entity_id: n.to_string(),
                canonical_name: n.to_string(),
                aliases: BTreeSet::new(),
                frequency: 1,
                is_pruned: false,
                prune_reason: None,
            })
            .collect();
        let edges = edges
            .iter()
            .map(|(h, t)| Triplet {
                head: h.to_string(),
                relation: "related to".into(),
                tail: t.to_string(),
                evidence: Evidence {
                    chunk_id: "synthetic#c0000".into(),
                    sentence_span: SentenceSpan::new(0, 0),
                    page_anchor: 1,
                },
                confidence: 1.0,
                node_id: "synthetic".into(),
                head_surface: h.to_string(),
                tail_surface: t.to_string(),
            })
            .collect();
        KnowledgeGraph::new(entities, edges, CountingUnit::TreeNodes)
    }

    pub fn new(entities: Vec<Entity>, edges: Vec<Triplet>, counting_unit: CountingUnit) -> Result<Self> {
        let mut g = KnowledgeGraph {
            entities,
            edges,
            view: View::Original,
            k_threshold: KThreshold::Infinite,
            stoplist_id: Stoplist::default().id(),
            counting_unit,
            index: GraphIndex::default(),
        };
        g.reindex()?;
        Ok(g)
    }

    fn reindex(&mut self) -> Result<()> {
        let mut position = HashMap::with_capacity(self.entities.len());
        for (i, e) in self.entities.iter().enumerate() {
            if position.insert(e.entity_id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate entity id {}", e.entity_id)));
            }
        }
        let n = self.entities.len();
        let mut out: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        let mut und: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for t in &self.edges {
            let (Some(&h), Some(&tl)) = (position.get(&t.head), position.get(&t.tail)) else {
                return Err(Error::validation(format!("edge {} -> {} references unknown entity", t.head, t.tail)));
            };
            if h == tl {
                return Err(Error::validation(format!("self loop on {}", t.head)));
            }
            out[h].insert(tl);
            und[h].insert(tl);
            und[tl].insert(h);
        }
        self.index = GraphIndex {
            position,
            out: out.into_iter().map(|s| s.into_iter().collect()).collect(),
            undirected: und.into_iter().map(|s| s.into_iter().collect()).collect(),
        };
        Ok(())
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.index.position.get(id).map(|&i| &self.entities[i])
    }

    fn active_position(&self, id: &str) -> Result<usize> {
        match self.index.position.get(id) {
            Some(&i) if !self.entities[i].is_pruned => Ok(i),
            Some(_) => Err(Error::validation(format!("entity {id} is pruned in this view"))),
            None => Err(Error::validation(format!("unknown entity {id}"))),
        }
    }

    pub fn active_entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| !e.is_pruned)
    }

    /// Directed successors of `id`.
    pub fn successors(&self, id: &str) -> Vec<&str> {
        self.index.position.get(id).map_or_else(Vec::new, |&i| {
            self.index.out[i].iter().map(|&j| self.entities[j].entity_id.as_str()).collect()
        })
    }

    pub fn has_edge(&self, head: &str, tail: &str) -> bool {
        match (self.index.position.get(head), self.index.position.get(tail)) {
            (Some(&h), Some(&t)) => self.index.out[h].binary_search(&t).is_ok(),
            _ => false,
        }
    }

    /// Edges `head -> tail` in file order.
    pub fn edges_between<'a>(&'a self, head: &'a str, tail: &'a str) -> impl Iterator<Item = &'a Triplet> + 'a {
        self.edges.iter().filter(move |t| t.head == head && t.tail == tail)
    }

    pub fn to_records(&self) -> Vec<GraphRecord> {
        let mut out = vec![GraphRecord::Meta {
            view: self.view,
            k_threshold: self.k_threshold,
            stoplist_id: self.stoplist_id.clone(),
            counting_unit: self.counting_unit,
        }];
        out.extend(self.entities.iter().cloned().map(GraphRecord::Entity));
        out.extend(self.edges.iter().cloned().map(GraphRecord::Edge));
        out
    }

    pub fn from_records(records: Vec<GraphRecord>) -> Result<Self> {
        let mut meta = None;
        let mut entities = Vec::new();
        let mut edges = Vec::new();
        for r in records {
            match r {
                GraphRecord::Meta {
                    view,
                    k_threshold,
                    stoplist_id,
                    counting_unit,
                } => meta = Some((view, k_threshold, stoplist_id, counting_unit)),
                GraphRecord::Entity(e) => entities.push(e),
                GraphRecord::Edge(t) => edges.push(t),
            }
        }
        let (view, k, stoplist_id, unit) = meta.ok_or_else(|| Error::validation("graph file has no meta record"))?;
        let mut g = KnowledgeGraph::new(entities, edges, unit)?;
        g.view = view;
        g.k_threshold = k;
        g.stoplist_id = stoplist_id;
        g.check_invariants()?;
        Ok(g)
    }

    pub fn check_invariants(&self) -> Result<()> {
        for e in &self.entities {
            if e.aliases.contains(&e.canonical_name) {
                return Err(Error::validation(format!("{} lists its canonical name as an alias", e.entity_id)));
            }
        }
        if self.view == View::Shattered {
            for t in &self.edges {
                if self.entity(&t.head).is_some_and(|e| e.is_pruned) || self.entity(&t.tail).is_some_and(|e| e.is_pruned) {
                    return Err(Error::validation(format!("edge {} -> {} touches a pruned entity", t.head, t.tail)));
                }
            }
        }
        Ok(())
    }
}

/// Returns the shattered view: entities with frequency above `k` or any
/// surface form on the stoplist are pruned and lose every incident edge.
/// Pruning always starts from the unpruned state of `graph`.
pub fn shatter(graph: &KnowledgeGraph, k: KThreshold, stoplist: &Stoplist) -> KnowledgeGraph {
    let mut entities = graph.entities.clone();
    for e in &mut entities {
        let stop = e.surfaces().any(|s| stoplist.matches(s));
        (e.is_pruned, e.prune_reason) = if stop {
            (true, Some(PruneReason::Stoplist))
        } else if k.exceeded_by(e.frequency) {
            (true, Some(PruneReason::OverK))
        } else {
            (false, None)
        };
    }
    let pruned: BTreeSet<&str> = entities.iter().filter(|e| e.is_pruned).map(|e| e.entity_id.as_str()).collect();
    let edges = graph
        .edges
        .iter()
        .filter(|t| !pruned.contains(t.head.as_str()) && !pruned.contains(t.tail.as_str()))
        .cloned()
        .collect();
    let mut out = KnowledgeGraph::new(entities, edges, graph.counting_unit).expect("subgraph of a valid graph is valid");
    out.view = View::Shattered;
    out.k_threshold = k;
    out.stoplist_id = stoplist.id();
    out
}

fn bfs(graph: &KnowledgeGraph, source: usize) -> Vec<Option<u32>> {
    let mut dist = vec![None; graph.entities.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap_or(0);
        for &v in &graph.index.undirected[u] {
            if dist[v].is_none() && !graph.entities[v].is_pruned {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Hop distance on the undirected skeleton; `None` when unreachable.
pub fn shortest_path_hops(graph: &KnowledgeGraph, u: &str, v: &str) -> Result<Option<u32>> {
    let (a, b) = (graph.active_position(u)?, graph.active_position(v)?);
    Ok(bfs(graph, a)[b])
}

/// All undirected hop distances from `u` to active entities.
pub fn distances_from(graph: &KnowledgeGraph, u: &str) -> Result<BTreeMap<String, u32>> {
    let a = graph.active_position(u)?;
    Ok(bfs(graph, a)
        .into_iter()
        .enumerate()
        .filter_map(|(i, d)| d.map(|d| (graph.entities[i].entity_id.clone(), d)))
        .collect())
}

pub const PATH_BASIS: &str = "ordered pairs of distinct nodes in the largest connected component (undirected skeleton)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub view: View,
    pub k_threshold: KThreshold,
    pub node_count: usize,
    pub edge_count: usize,
    pub pruned_count: usize,
    pub component_count: usize,
    pub largest_component_size: usize,
    pub average_shortest_path: f64,
    pub path_basis: String,
}

/// Connected components of active entities, largest first (ties by the
/// smallest member position).
fn components(graph: &KnowledgeGraph) -> Vec<Vec<usize>> {
    let n = graph.entities.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] || graph.entities[s].is_pruned {
            continue;
        }
        let comp: Vec<usize> = bfs(graph, s).iter().enumerate().filter(|(_, d)| d.is_some()).map(|(i, _)| i).collect();
        for &i in &comp {
            seen[i] = true;
        }
        out.push(comp);
    }
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    out
}

pub fn topology_report(graph: &KnowledgeGraph, execution: Execution) -> Result<TopologyReport> {
    let node_count = graph.active_entities().count();
    if node_count == 0 {
        return Err(Error::validation("topology_report needs a non-empty graph"));
    }
    let comps = components(graph);
    let largest = &comps[0];
    let sums: Vec<u64> = execution.map(largest, |&s| bfs(graph, s).iter().flatten().map(|&d| u64::from(d)).sum());
    let s = largest.len();
    let asp = if s < 2 {
        0.0
    } else {
        sums.iter().sum::<u64>() as f64 / (s * (s - 1)) as f64
    };
    let edge_count = graph.edges.len();
    Ok(TopologyReport {
        view: graph.view,
        k_threshold: graph.k_threshold,
        node_count,
        edge_count,
        pruned_count: graph.entities.len() - node_count,
        component_count: comps.len(),
        largest_component_size: s,
        average_shortest_path: asp,
        path_basis: PATH_BASIS.into(),
    })
}

/// One shattered topology per threshold, in the given order.
pub fn shatter_sweep(
    original: &KnowledgeGraph,
    ks: &[KThreshold],
    stoplist: &Stoplist,
    execution: Execution,
) -> Result<Vec<TopologyReport>> {
    ks.iter().map(|&k| topology_report(&shatter(original, k, stoplist), execution)).collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn entity(id: &str, name: &str, freq: u64) -> Entity {
        Entity {
            entity_id: id.into(),
            canonical_name: name.into(),
            aliases: BTreeSet::new(),
            frequency: freq,
            is_pruned: false,
            prune_reason: None,
        }
    }

    pub fn edge(h: &str, t: &str) -> Triplet {
        Triplet {
            head: h.into(),
            relation: "related to".into(),
            tail: t.into(),
            evidence: Evidence {
                chunk_id: "doc#c0000".into(),
                sentence_span: SentenceSpan::new(0, 0),
                page_anchor: 1,
            },
            confidence: 1.0,
            node_id: "L1-000".into(),
            head_surface: h.into(),
            tail_surface: t.into(),
        }
    }

    /// Edges carry evidence in `doc#c0000`, which synthesis fixtures provide.
    pub fn graph(nodes: &[&str], edges: &[(&str, &str)]) -> KnowledgeGraph {
        let entities = nodes.iter().map(|n| entity(n, n, 1)).collect();
        let edges = edges.iter().map(|(h, t)| edge(h, t)).collect();
        KnowledgeGraph::new(entities, edges, CountingUnit::TreeNodes).unwrap()
    }

    /// The diabetes / fracture-risk example with its generic `Blood` hub.
    pub fn diabetes() -> KnowledgeGraph {
        graph(
            &["Type 2 Diabetes", "Blood", "Fracture risk", "AGEs accumulation", "Osteoblast suppression", "Impaired Bone Quality"],
            &[
                ("Type 2 Diabetes", "Blood"),
                ("Blood", "Fracture risk"),
                ("Type 2 Diabetes", "AGEs accumulation"),
                ("AGEs accumulation", "Osteoblast suppression"),
                ("Osteoblast suppression", "Impaired Bone Quality"),
                ("Impaired Bone Quality", "Fracture risk"),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diabetes_distance_two_then_four() {
        let g = diabetes();
        assert_eq!(shortest_path_hops(&g, "Type 2 Diabetes", "Fracture risk").unwrap(), Some(2));
        let s = shatter(&g, KThreshold::Infinite, &Stoplist::from_terms(["blood"]));
        assert_eq!(shortest_path_hops(&s, "Type 2 Diabetes", "Fracture risk").unwrap(), Some(4));
        assert!(matches!(shortest_path_hops(&s, "Blood", "Fracture risk"), Err(Error::Validation(_))));
        assert_eq!(shortest_path_hops(&g, "Blood", "Blood").unwrap(), Some(0));
        let before = topology_report(&g, Execution::Sequential).unwrap();
        let after = topology_report(&s, Execution::Sequential).unwrap();
        assert!(after.average_shortest_path > before.average_shortest_path);
        s.check_invariants().unwrap();
        assert_eq!(g.view, View::Original);
        assert!(g.entities.iter().all(|e| !e.is_pruned));
    }

    #[test]
    fn noop_prunes() {
        let g = diabetes();
        let s = shatter(&g, KThreshold::Infinite, &Stoplist::default());
        assert_eq!(s.edges, g.edges);
        assert_eq!(s.entities, g.entities);
        let s = shatter(&g, KThreshold::Infinite, &Stoplist::from_terms(["nothing here"]));
        assert_eq!(s.edges.len(), g.edges.len());
    }

    #[test]
    fn prune_set_is_over_k_union_stoplist() {
        let mut g = diabetes();
        g.entities[2].frequency = 60;
        g.entities[3].frequency = 50;
        g.entities[4].aliases.insert("OB suppression".into());
        let s = shatter(&g, KThreshold::Finite(50), &Stoplist::parse("# generic\n  BLOOD \nob   Suppression\n"));
        let pruned: Vec<(&str, Option<PruneReason>)> = s
            .entities
            .iter()
            .filter(|e| e.is_pruned)
            .map(|e| (e.entity_id.as_str(), e.prune_reason))
            .collect();
        assert_eq!(
            pruned,
            [
                ("Blood", Some(PruneReason::Stoplist)),
                ("Fracture risk", Some(PruneReason::OverK)),
                ("Osteoblast suppression", Some(PruneReason::Stoplist)),
            ]
        );
    }

    #[test]
    fn closed_form_asp() {
        let path = graph(&["a", "b", "c"], &[("a", "b"), ("b", "c")]);
        let r = topology_report(&path, Execution::Sequential).unwrap();
        assert_eq!(r.largest_component_size, 3);
        assert!((r.average_shortest_path - 4.0 / 3.0).abs() < 1e-12);
        let k4 = graph(&["a", "b", "c", "d"], &[("a", "b"), ("a", "c"), ("a", "d"), ("b", "c"), ("b", "d"), ("c", "d")]);
        assert_eq!(topology_report(&k4, Execution::Parallel).unwrap().average_shortest_path, 1.0);
        let empty = graph(&[], &[]);
        assert!(topology_report(&empty, Execution::Sequential).is_err());
    }

    #[test]
    fn frequency_units() {
        let g = diabetes();
        let ts: Vec<Triplet> = g.edges[..3].to_vec();
        assert_eq!(entity_frequencies(&ts, CountingUnit::TreeNodes, None).unwrap()["Type 2 Diabetes"], 1);
        let mut three = vec![edge("x", "y"), edge("x", "z"), edge("w", "x")];
        assert_eq!(entity_frequencies(&three, CountingUnit::TreeNodes, None).unwrap()["x"], 1);
        assert_eq!(entity_frequencies(&three, CountingUnit::Mentions, None).unwrap()["x"], 3);
        three[2].node_id = "L1-001".into();
        assert_eq!(entity_frequencies(&three, CountingUnit::TreeNodes, None).unwrap()["x"], 2);
        assert!(entity_frequencies(&[], CountingUnit::Mentions, None).unwrap().is_empty());
        let known: BTreeSet<String> = ["x".to_string()].into();
        assert!(entity_frequencies(&three, CountingUnit::Mentions, Some(&known)).is_err());
    }

    #[test]
    fn k_threshold_parsing() {
        assert_eq!(parse_k_list("10,50, inf").unwrap(), [KThreshold::Finite(10), KThreshold::Finite(50), KThreshold::Infinite]);
        assert!("0".parse::<KThreshold>().is_err());
        assert!("abc".parse::<KThreshold>().is_err());
        let json = serde_json::to_string(&[KThreshold::Finite(5), KThreshold::Infinite]).unwrap();
        assert_eq!(json, r#"[5,"inf"]"#);
        let back: Vec<KThreshold> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, [KThreshold::Finite(5), KThreshold::Infinite]);
    }

    #[test]
    fn records_round_trip() {
        let s = shatter(&diabetes(), KThreshold::Finite(3), &Stoplist::from_terms(["blood"]));
        let back = KnowledgeGraph::from_records(s.to_records()).unwrap();
        assert_eq!(back, s);
    }

    /// Shortest simple path by exhaustive DFS enumeration.
    fn enumerate_shortest(adj: &[Vec<usize>], u: usize, v: usize) -> Option<u32> {
        fn go(adj: &[Vec<usize>], at: usize, target: usize, seen: &mut Vec<bool>, len: u32, best: &mut Option<u32>) {
            if at == target {
                *best = Some(best.map_or(len, |b| b.min(len)));
                return;
            }
            for &n in &adj[at] {
                if !seen[n] {
                    seen[n] = true;
                    go(adj, n, target, seen, len + 1, best);
                    seen[n] = false;
                }
            }
        }
        let mut seen = vec![false; adj.len()];
        seen[u] = true;
        let mut best = None;
        go(adj, u, v, &mut seen, 0, &mut best);
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn bfs_matches_path_enumeration(n in 2usize..12, raw in proptest::collection::vec((0usize..12, 0usize..12), 0..20)) {
            let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
            let mut pairs = BTreeSet::new();
            for (a, b) in raw {
                let (a, b) = (a % n, b % n);
                if a != b {
                    pairs.insert((a, b));
                }
            }
            let mut adj = vec![Vec::new(); n];
            for &(a, b) in &pairs {
                adj[a].push(b);
                adj[b].push(a);
            }
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let edges: Vec<(&str, &str)> = pairs.iter().map(|&(a, b)| (refs[a], refs[b])).collect();
            let g = graph(&refs, &edges);
            for u in 0..n {
                for v in 0..n {
                    prop_assert_eq!(shortest_path_hops(&g, refs[u], refs[v]).unwrap(), enumerate_shortest(&adj, u, v));
                }
            }
        }
    }
}
