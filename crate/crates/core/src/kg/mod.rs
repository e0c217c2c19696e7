//! Knowledge-graph construction: triplet extraction with evidence checks,
//! entity alignment, hub pruning and topology analytics.

pub mod align;
pub mod extract;
pub mod graph;

pub use align::{align_maxmatch, damerau_levenshtein, fuzzy_merge, ThetaSchedule, TokenMode, Vocabulary};
pub use extract::{build_graph, extract_all, extract_triplets, ExtractionConfig, ExtractionReport, NodeExtraction};
pub use graph::{
    distances_from, entity_frequencies, shatter, shatter_sweep, shortest_path_hops, topology_report, CountingUnit, Entity,
    Evidence, KThreshold, KnowledgeGraph, PruneReason, Stoplist, TopologyReport, Triplet, View,
};
