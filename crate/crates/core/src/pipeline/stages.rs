//! Stage bodies: read inputs from the run directory, write outputs.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use super::config::ProviderKind;
use super::{Command, PipelineConfig, Run};
use crate::corpus::{self, Chunk, ChunkingConfig, CorpusStore, Document, Sentence};
use crate::eval::{self, ChunkIndex, EvalConfig, EvalOutcome, Mode, RagContext};
use crate::hierarchy::{build_summary_tree, LevelReport, SummaryTree, SummaryTreeNode, TreeConfig};
use crate::kg::graph::GraphRecord;
use crate::kg::{self, ExtractionConfig, KnowledgeGraph, Stoplist};
use crate::providers::http::{HttpChat, HttpEmbedder, HttpEndpoint, HttpReranker};
use crate::providers::mock::{MockChat, MockEmbedder, MockReranker};
use crate::providers::{embed_texts, ChatClient, ChatProvider, EmbeddingProvider, RerankProvider, ResponseCache};
use crate::seed::derive_seed;
use crate::synthesis::vignette::SynthesisConfig;
use crate::synthesis::{self, Adjudication, Adjudicator, Discard, QaItem, ReasoningChain};
use crate::{jsonl, Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub struct Providers {
    pub chat: Box<dyn ChatProvider>,
    pub embedder: Box<dyn EmbeddingProvider>,
    pub reranker: Option<Box<dyn RerankProvider>>,
}

impl Providers {
    pub fn from_config(config: &PipelineConfig, run_dir: &Path) -> Result<Self> {
        let p = &config.providers;
        Ok(match p.kind {
            ProviderKind::Mock => {
                let mut chat = MockChat::new(derive_seed(config.master_seed, "mock-chat", ""));
                chat.leak_every = p.mock_leak_every;
                if let Some(path) = &p.mock_triplets {
                    chat = chat.with_fixture_file(path)?;
                }
                Providers {
                    chat: Box::new(chat),
                    embedder: Box::new(MockEmbedder::new(p.mock_embedding_dim, config.master_seed)),
                    reranker: p.mock_rerank.then(|| Box::new(MockReranker) as Box<dyn RerankProvider>),
                }
            }
            ProviderKind::Http => {
                let endpoint = |url: &str| HttpEndpoint::new(url, &p.api_key_env, p.max_in_flight, Duration::from_secs(p.timeout_secs));
                let mut chat = ChatClient::new(HttpChat::new(endpoint(&p.chat_url)));
                if p.cache {
                    chat = chat.with_cache(ResponseCache::open(run_dir.join("cache"))?);
                }
                Providers {
                    chat: Box::new(chat),
                    embedder: Box::new(HttpEmbedder::new(endpoint(&p.embed_url), p.embed_model.clone())),
                    reranker: (!p.rerank_url.is_empty())
                        .then(|| Box::new(HttpReranker::new(endpoint(&p.rerank_url), p.rerank_model.clone())) as Box<dyn RerankProvider>),
                }
            }
        })
    }
}

/// Model names made safe for file names.
pub fn file_token(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '.') { c } else { '_' })
        .collect()
}

pub fn outcome_file(model: &str, mode: Mode) -> String {
    format!("outcomes_{}_{}.jsonl", file_token(model), mode)
}

pub fn outcome_files(config: &PipelineConfig) -> Vec<String> {
    let e = &config.evaluation;
    e.models.iter().flat_map(|m| e.modes.iter().map(move |&mode| outcome_file(m, mode))).collect()
}

fn report_file(model: &str) -> String {
    format!("report_{}.json", file_token(model))
}

impl Run {
    fn save<T: Serialize>(&self, name: &str, schema: &str, records: &[T]) -> Result<String> {
        jsonl::snapshot(&self.path(name), schema, SCHEMA_VERSION, records)?;
        Ok(name.to_string())
    }

    fn load<T: DeserializeOwned>(&self, name: &str, schema: &str) -> Result<Vec<T>> {
        jsonl::load(&self.path(name), schema, SCHEMA_VERSION)
    }

    fn save_json(&self, name: &str, value: &serde_json::Value) -> Result<String> {
        jsonl::write_json(&self.path(name), value)?;
        Ok(name.to_string())
    }

    fn store(&self) -> Result<CorpusStore> {
        Ok(CorpusStore::new(
            self.config.corpus.language,
            self.load("sentences.jsonl", "sentence")?,
            self.load("chunks.jsonl", "chunk")?,
        ))
    }

    fn seed(&self, stage: &str) -> u64 {
        derive_seed(self.config.master_seed, stage, "")
    }

    fn stoplist(&self) -> Result<Stoplist> {
        Ok(match &self.config.graph.stoplist {
            Some(p) => Stoplist::parse(&fs::read_to_string(p)?),
            None => Stoplist::default(),
        })
    }

    fn graph(&self, name: &str) -> Result<KnowledgeGraph> {
        KnowledgeGraph::from_records(self.load::<GraphRecord>(name, "graph")?)
    }
}

/// Runs `command` and returns the names of the files it wrote.
pub(super) fn run_stage(run: &Run, command: Command) -> Result<Vec<String>> {
    match command {
        Command::Ingest => ingest(run),
        Command::Chunk => chunk(run),
        Command::Tree => tree(run),
        Command::Extract => extract(run),
        Command::Shatter => shatter(run),
        Command::Mine => mine(run),
        Command::Synthesize => synthesize(run),
        Command::Adjudicate => adjudicate(run),
        Command::Stats => stats(run),
        Command::Evaluate => evaluate(run),
        Command::Report => report(run),
        Command::ShatterSweep => shatter_sweep(run),
    }
}

fn ingest(run: &Run) -> Result<Vec<String>> {
    let mut docs: Vec<Document> = Vec::new();
    for path in &run.config.corpus.paths {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "doc".into());
        let mut doc_id = file_token(&stem);
        if docs.iter().any(|d| d.doc_id == doc_id) {
            doc_id = format!("{doc_id}-{}", docs.len());
        }
        let mut doc = corpus::load_document(path, &doc_id, run.config.corpus.language)?.cleaned();
        doc.source_path = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        docs.push(doc);
    }
    Ok(vec![run.save("documents.jsonl", "document", &docs)?])
}

fn chunk(run: &Run) -> Result<Vec<String>> {
    let docs: Vec<Document> = run.load("documents.jsonl", "document")?;
    let sentences: Vec<Sentence> = docs.iter().flat_map(corpus::split_sentences).collect();
    let texts: Vec<String> = sentences.iter().map(|s| s.text.clone()).collect();
    let embeddings = embed_texts(run.providers.embedder.as_ref(), &texts)?;
    let config = ChunkingConfig {
        language: run.config.corpus.language,
        ..run.config.chunking.clone()
    };
    let chunks = corpus::semantic_chunk(&sentences, &embeddings, &config)?;
    Ok(vec![
        run.save("sentences.jsonl", "sentence", &sentences)?,
        run.save("chunks.jsonl", "chunk", &chunks)?,
    ])
}

fn tree_config(run: &Run) -> TreeConfig {
    TreeConfig {
        seed: run.seed("tree"),
        execution: run.config.execution,
        ..run.config.tree.clone()
    }
}

fn level_report(run: &Run, levels: &[LevelReport]) -> serde_json::Value {
    json!({ "config_digest": run.config.digest(), "levels": levels })
}

fn tree(run: &Run) -> Result<Vec<String>> {
    let chunks: Vec<Chunk> = run.load("chunks.jsonl", "chunk")?;
    match build_summary_tree(&chunks, run.providers.chat.as_ref(), run.providers.embedder.as_ref(), &tree_config(run)) {
        Ok(tree) => Ok(vec![
            run.save("tree.jsonl", "tree_node", &tree.nodes)?,
            run.save_json("gmm_report.json", &level_report(run, &tree.levels))?,
        ]),
        Err(failure) => {
            // keep what was built so the failure can be inspected
            run.save("tree.partial.jsonl", "tree_node", &failure.partial.nodes)?;
            Err((*failure).error)
        }
    }
}

fn extraction_config(run: &Run) -> ExtractionConfig {
    ExtractionConfig {
        seed: run.seed("extract"),
        execution: run.config.execution,
        ..run.config.extraction.clone()
    }
}

fn extract(run: &Run) -> Result<Vec<String>> {
    let nodes: Vec<SummaryTreeNode> = run.load("tree.jsonl", "tree_node")?;
    let report: serde_json::Value = jsonl::read_json(&run.path("gmm_report.json"))?;
    let levels: Vec<LevelReport> = serde_json::from_value(report["levels"].clone())?;
    let tree = SummaryTree { nodes, levels };
    let store = run.store()?;
    let config = extraction_config(run);
    let (extractions, mut report) = kg::extract_all(&tree, &store, run.providers.chat.as_ref(), &config)?;
    let graph = kg::build_graph(&extractions, &config, &mut report)?;
    graph.check_invariants()?;
    Ok(vec![
        run.save("graph_original.jsonl", "graph", &graph.to_records())?,
        run.save_json(
            "extraction_report.json",
            &json!({ "config_digest": run.config.digest(), "report": report, "nodes": extractions }),
        )?,
    ])
}

fn shatter(run: &Run) -> Result<Vec<String>> {
    let original = run.graph("graph_original.jsonl")?;
    let shattered = kg::shatter(&original, run.config.graph.k_threshold, &run.stoplist()?);
    shattered.check_invariants()?;
    let topo = json!({
        "config_digest": run.config.digest(),
        "original": kg::topology_report(&original, run.config.execution)?,
        "shattered": kg::topology_report(&shattered, run.config.execution).ok(),
    });
    Ok(vec![
        run.save("graph.jsonl", "graph", &shattered.to_records())?,
        run.save_json("topology_report.json", &topo)?,
    ])
}

fn shatter_sweep(run: &Run) -> Result<Vec<String>> {
    let original = run.graph("graph_original.jsonl")?;
    let stoplist = run.stoplist()?;
    let mut rows = Vec::new();
    for &k in &run.config.graph.sweep {
        let g = kg::shatter(&original, k, &stoplist);
        // a threshold that prunes everything has no topology to report
        rows.push(json!({ "k": k, "report": kg::topology_report(&g, run.config.execution).ok() }));
    }
    Ok(vec![run.save_json(
        "sweep_report.json",
        &json!({ "config_digest": run.config.digest(), "sweep": rows }),
    )?])
}

fn mine(run: &Run) -> Result<Vec<String>> {
    let graph = run.graph("graph.jsonl")?;
    let chains = synthesis::mine_chains(&graph, &run.config.mining)?;
    let mut kept = Vec::new();
    let mut discards = Vec::new();
    for c in &chains {
        match synthesis::sample_hard_negative(c, &graph, derive_seed(run.config.master_seed, "hard-negative", &c.chain_id)) {
            Ok(full) => kept.push(full),
            Err(Error::NoHardNegative { chain_id, reason }) => discards.push(Discard {
                chain_id,
                stage: "mine".into(),
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    log::info!("mine: {} chains, {} with hard negatives", chains.len(), kept.len());
    Ok(vec![
        run.save("chains.jsonl", "reasoning_chain", &kept)?,
        run.save("chain_discards.jsonl", "discard", &discards)?,
    ])
}

fn synthesize(run: &Run) -> Result<Vec<String>> {
    let chains: Vec<ReasoningChain> = run.load("chains.jsonl", "reasoning_chain")?;
    let graph = run.graph("graph.jsonl")?;
    let store = run.store()?;
    let config = SynthesisConfig {
        language: run.config.corpus.language,
        ..run.config.synthesis.clone()
    };
    let results = run.config.execution.map(&chains, |c| {
        let seed = derive_seed(run.config.master_seed, "synthesize", &c.chain_id);
        synthesis::synthesize_item(c, &graph, &store, run.providers.chat.as_ref(), &config, seed)
            .and_then(|item| item.check().map(|_| item))
    });
    let mut items = Vec::new();
    let mut discards = Vec::new();
    for (c, r) in chains.iter().zip(results) {
        match r {
            Ok(item) => items.push(item),
            Err(Error::ItemDiscarded { chain_id, reason }) => discards.push(Discard {
                chain_id,
                stage: "synthesize".into(),
                reason,
            }),
            Err(Error::Validation(reason)) => discards.push(Discard {
                chain_id: c.chain_id.clone(),
                stage: "synthesize".into(),
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    log::info!("synthesize: {} items, {} discarded", items.len(), discards.len());
    Ok(vec![
        run.save("dataset.jsonl", "qa_item", &items)?,
        run.save("discards.jsonl", "discard", &discards)?,
    ])
}

fn adjudicate(run: &Run) -> Result<Vec<String>> {
    let dataset: Vec<QaItem> = run.load("dataset.jsonl", "qa_item")?;
    let ensemble: Vec<Adjudicator<'_>> = run
        .config
        .adjudication
        .models
        .iter()
        .map(|m| Adjudicator {
            provider: run.providers.chat.as_ref(),
            model_name: m.clone(),
        })
        .collect();
    let results = run.config.execution.map(&dataset, |item| synthesis::adjudicate_quality(item, &ensemble));
    let mut verdicts: Vec<Adjudication> = Vec::new();
    for r in results {
        match r {
            Ok(a) => verdicts.push(a),
            Err(Error::Adjudication { qa_id }) => log::warn!("adjudication: no usable verdict for {qa_id}"),
            Err(e) => return Err(e),
        }
    }
    Ok(vec![run.save("adjudications.jsonl", "adjudication", &verdicts)?])
}

fn stats(run: &Run) -> Result<Vec<String>> {
    let dataset: Vec<QaItem> = run.load("dataset.jsonl", "qa_item")?;
    let verdicts: Vec<Adjudication> = run.load("adjudications.jsonl", "adjudication")?;
    let store = run.store()?;
    let stats = synthesis::compute_overlap_stats(&dataset, &store, &verdicts, Some(run.providers.embedder.as_ref()))?;
    Ok(vec![run.save_json(
        "stats_report.json",
        &json!({ "config_digest": run.config.digest(), "stats": stats }),
    )?])
}

/// Outcomes already appended to a partial file; a torn final line is dropped.
fn read_partial(path: &Path) -> Result<Vec<EvalOutcome>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines().skip(1) {
        match serde_json::from_str(&line?) {
            Ok(o) => out.push(o),
            Err(_) => break,
        }
    }
    Ok(out)
}

fn evaluate(run: &Run) -> Result<Vec<String>> {
    let dataset: Vec<QaItem> = run.load("dataset.jsonl", "qa_item")?;
    let e = &run.config.evaluation;
    let mut written = Vec::new();
    let contexts: Option<Vec<RagContext>> = if e.modes.contains(&Mode::Rag) {
        let store = run.store()?;
        let index = ChunkIndex::from_store(&store);
        let ctx = eval::build_rag_contexts(
            &dataset,
            &index,
            run.providers.embedder.as_ref(),
            run.providers.reranker.as_deref(),
            &e.retrieval,
            run.seed("rag"),
        )?;
        written.push(run.save("rag_contexts.jsonl", "rag_context", &ctx)?);
        Some(ctx)
    } else {
        None
    };
    let config = EvalConfig {
        batch_size: e.batch_size,
        execution: run.config.execution,
        ..EvalConfig::default()
    };
    for model in &e.models {
        for &mode in &e.modes {
            let name = outcome_file(model, mode);
            let partial = run.path(&format!("{name}.partial"));
            let done = read_partial(&partial)?;
            if !partial.exists() {
                jsonl::write_atomic(&partial, &jsonl::to_jsonl::<EvalOutcome>("eval_outcome", SCHEMA_VERSION, &[])?)?;
            }
            let mut sink = OpenOptions::new().append(true).open(&partial)?;
            let mut persist = |batch: &[EvalOutcome]| -> Result<()> {
                for o in batch {
                    serde_json::to_writer(&mut sink, o)?;
                    sink.write_all(b"\n")?;
                }
                sink.flush()?;
                Ok(())
            };
            let eval_config = EvalConfig {
                model_name: model.clone(),
                ..config.clone()
            };
            let outcomes = eval::evaluate_dataset(
                &dataset,
                run.providers.chat.as_ref(),
                model,
                mode,
                contexts.as_deref(),
                &eval_config,
                &done,
                &mut persist,
            )?;
            written.push(run.save(&name, "eval_outcome", &outcomes)?);
            fs::remove_file(&partial)?;
        }
    }
    Ok(written)
}

fn report(run: &Run) -> Result<Vec<String>> {
    let dataset: Vec<QaItem> = run.load("dataset.jsonl", "qa_item")?;
    let e = &run.config.evaluation;
    let mut written = Vec::new();
    let mut reports = Vec::new();
    for model in &e.models {
        let mut by_mode: HashMap<Mode, Vec<EvalOutcome>> = HashMap::new();
        for &mode in &e.modes {
            by_mode.insert(mode, run.load(&outcome_file(model, mode), "eval_outcome")?);
        }
        let Some(zero) = by_mode.get(&Mode::ZeroShot) else {
            return Err(Error::Config("report needs zero_shot in evaluation.modes".into()));
        };
        let rag = by_mode.get(&Mode::Rag).map(Vec::as_slice);
        let report = eval::behavioral_report(model, &dataset, zero, rag)?;
        let mut rates: BTreeMap<&str, serde_json::Value> = BTreeMap::new();
        rates.insert("hne", rate_json(eval::compute_hne(zero, &dataset)));
        if let Some(rag) = rag {
            rates.insert("r3", rate_json(eval::compute_r3(zero, rag)));
        }
        written.push(run.save_json(
            &report_file(model),
            &json!({
                "config_digest": run.config.digest(),
                "prompt_version": eval::PROMPT_VERSION,
                "overall": rates,
                "report": report,
            }),
        )?);
        reports.push(report);
    }
    jsonl::write_atomic(&run.path("report.txt"), eval::metrics::render_table(&reports).as_bytes())?;
    written.push("report.txt".into());
    Ok(written)
}

fn rate_json(r: Result<eval::Rate>) -> serde_json::Value {
    match r {
        Ok(rate) => serde_json::to_value(rate).unwrap_or(serde_json::Value::Null),
        Err(e) => json!({ "undefined": e.to_string() }),
    }
}
