//! The single TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::ChunkingConfig;
use crate::eval::RetrievalConfig;
use crate::exec::Execution;
use crate::hierarchy::TreeConfig;
use crate::kg::graph::parse_k_list;
use crate::kg::{ExtractionConfig, KThreshold};
use crate::synthesis::vignette::SynthesisConfig;
use crate::synthesis::MiningLimits;
use crate::text::{sha256_hex, Language};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub chat_url: String,
    pub embed_url: String,
    pub embed_model: String,
    /// Empty disables the rerank stage.
    pub rerank_url: String,
    pub rerank_model: String,
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    /// Store chat responses under `<run>/cache`.
    pub cache: bool,
    pub mock_embedding_dim: usize,
    /// Tab-separated triplets the mock extractor recognizes.
    pub mock_triplets: Option<PathBuf>,
    pub mock_leak_every: u64,
    pub mock_rerank: bool,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            chat_url: String::new(),
            embed_url: String::new(),
            embed_model: String::new(),
            rerank_url: String::new(),
            rerank_model: String::new(),
            api_key_env: "HOPBENCH_API_KEY".into(),
            max_in_flight: 8,
            timeout_secs: 120,
            cache: true,
            mock_embedding_dim: 64,
            mock_triplets: None,
            mock_leak_every: 10,
            mock_rerank: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub paths: Vec<PathBuf>,
    pub language: Language,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            paths: Vec::new(),
            language: Language::En,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub k_threshold: KThreshold,
    pub stoplist: Option<PathBuf>,
    /// Thresholds for `shatter-sweep`, e.g. `["inf", 200, 100, 50]`.
    pub sweep: Vec<KThreshold>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k_threshold: KThreshold::Finite(50),
            stoplist: None,
            sweep: parse_k_list("inf,200,100,50,20,10").expect("static list"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdjudicationConfig {
    /// Ensemble member model names; majority ties go to the first.
    pub models: Vec<String>,
}

impl Default for AdjudicationConfig {
    fn default() -> Self {
        AdjudicationConfig {
            models: vec!["judge-a".into(), "judge-b".into(), "judge-c".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub models: Vec<String>,
    pub modes: Vec<crate::eval::Mode>,
    pub retrieval: RetrievalConfig,
    pub batch_size: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            models: vec!["mock-model".into()],
            modes: vec![crate::eval::Mode::ZeroShot, crate::eval::Mode::Rag],
            retrieval: RetrievalConfig::default(),
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub master_seed: u64,
    pub execution: Execution,
    pub corpus: CorpusConfig,
    pub providers: ProviderConfig,
    pub chunking: ChunkingConfig,
    pub tree: TreeConfig,
    pub extraction: ExtractionConfig,
    pub graph: GraphConfig,
    pub mining: MiningLimits,
    pub synthesis: SynthesisConfig,
    pub adjudication: AdjudicationConfig,
    pub evaluation: EvaluationConfig,
}

impl PipelineConfig {
    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.corpus.paths.iter_mut().for_each(resolve);
        config.graph.stoplist.iter_mut().for_each(resolve);
        config.providers.mock_triplets.iter_mut().for_each(resolve);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.corpus.paths.is_empty() {
            return bad("corpus.paths is empty");
        }
        if !(self.chunking.percentile > 0.0 && self.chunking.percentile <= 100.0) {
            return bad("chunking.percentile must lie in (0, 100]");
        }
        if self.chunking.max_sentences == 0 {
            return bad("chunking.max_sentences must be positive");
        }
        self.tree.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.extraction.theta.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(3..=26).contains(&self.synthesis.n_options) {
            return bad("synthesis.n_options must be in 3..=26");
        }
        if !(0.0..=2.0).contains(&self.synthesis.temperature) {
            return bad("synthesis.temperature must be in [0, 2]");
        }
        if self.adjudication.models.is_empty() || self.evaluation.models.is_empty() {
            return bad("adjudication.models and evaluation.models need at least one entry");
        }
        self.evaluation.retrieval.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.providers.kind == ProviderKind::Http && (self.providers.chat_url.is_empty() || self.providers.embed_url.is_empty()) {
            return bad("http providers need chat_url and embed_url");
        }
        if self.providers.mock_embedding_dim < 2 {
            return bad("providers.mock_embedding_dim must be at least 2");
        }
        Ok(())
    }

    /// Digest of the canonical JSON form, embedded in every report.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(json)[..16].to_string()
    }
}
