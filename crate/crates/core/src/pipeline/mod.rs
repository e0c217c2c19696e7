//! Stage orchestration over a run directory.
//!
//! Each command reads the artifacts of earlier stages, writes its own through
//! temp-file renames, and records input and output digests in
//! `manifest.json`. A command whose config digest and input digests match its
//! last recorded run, and whose outputs are unchanged on disk, is a no-op.

pub mod config;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::jsonl;
use crate::text::sha256_hex;
use crate::{Error, Result};

pub use config::{PipelineConfig, ProviderKind};
pub use stages::{Providers, SCHEMA_VERSION};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Command {
    Ingest,
    Chunk,
    Tree,
    Extract,
    Shatter,
    Mine,
    Synthesize,
    Adjudicate,
    Stats,
    Evaluate,
    Report,
    ShatterSweep,
}

impl Command {
    pub const ALL: [Command; 12] = [
        Command::Ingest,
        Command::Chunk,
        Command::Tree,
        Command::Extract,
        Command::Shatter,
        Command::Mine,
        Command::Synthesize,
        Command::Adjudicate,
        Command::Stats,
        Command::Evaluate,
        Command::Report,
        Command::ShatterSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Chunk => "chunk",
            Command::Tree => "tree",
            Command::Extract => "extract",
            Command::Shatter => "shatter",
            Command::Mine => "mine",
            Command::Synthesize => "synthesize",
            Command::Adjudicate => "adjudicate",
            Command::Stats => "stats",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
            Command::ShatterSweep => "shatter-sweep",
        }
    }

    /// Run-directory artifacts this command reads, with the command producing each.
    fn inputs(self, config: &PipelineConfig) -> Vec<(String, Command)> {
        use Command::*;
        let a = |name: &str, by: Command| (name.to_string(), by);
        let store = [a("sentences.jsonl", Chunk), a("chunks.jsonl", Chunk)];
        match self {
            Ingest => vec![],
            Chunk => vec![a("documents.jsonl", Ingest)],
            Tree => vec![a("chunks.jsonl", Chunk)],
            Extract => [a("tree.jsonl", Tree), a("gmm_report.json", Tree)].into_iter().chain(store).collect(),
            Shatter | ShatterSweep => vec![a("graph_original.jsonl", Extract)],
            Mine => vec![a("graph.jsonl", Shatter)],
            Synthesize => [a("chains.jsonl", Mine), a("graph.jsonl", Shatter)].into_iter().chain(store).collect(),
            Adjudicate => vec![a("dataset.jsonl", Synthesize)],
            Stats => [a("dataset.jsonl", Synthesize), a("adjudications.jsonl", Adjudicate)]
                .into_iter()
                .chain(store)
                .collect(),
            Evaluate => [a("dataset.jsonl", Synthesize)].into_iter().chain(store).collect(),
            Report => std::iter::once(a("dataset.jsonl", Synthesize))
                .chain(stages::outcome_files(config).into_iter().map(|f| (f, Evaluate)))
                .collect(),
        }
    }

    /// Files outside the run directory whose content the command depends on.
    fn external_inputs(self, config: &PipelineConfig) -> Vec<PathBuf> {
        match self {
            Command::Ingest => config.corpus.paths.clone(),
            Command::Extract => config.providers.mock_triplets.iter().cloned().collect(),
            Command::Shatter | Command::ShatterSweep => config.graph.stoplist.iter().cloned().collect(),
            _ => vec![],
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown command `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_at: u64,
    pub finished_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_digest: String,
    pub tool_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Option<Self>> {
        let p = run_dir.join(MANIFEST);
        if !p.exists() {
            return Ok(None);
        }
        jsonl::read_json(&p).map(Some)
    }

    /// Recorded outputs match the files on disk, and every consumed
    /// artifact matches what its producer recorded.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for (stage, rec) in &self.stages {
            for (name, digest) in &rec.outputs {
                if file_digest(&run_dir.join(name))? != *digest {
                    return Err(Error::validation(format!("{name} changed on disk since {stage} wrote it")));
                }
            }
            for (name, digest) in rec.inputs.iter().filter(|(n, _)| !Path::new(n.as_str()).is_absolute()) {
                if !self.stages.values().any(|r| r.outputs.get(name) == Some(digest)) {
                    return Err(Error::validation(format!("{stage} consumed {name} with an unrecorded digest")));
                }
            }
        }
        Ok(())
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(fs::read(path)?))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    /// Inputs, config and outputs were unchanged.
    UpToDate,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Accept a config that differs from the manifest, and rerun up-to-date stages.
    pub force: bool,
}

/// Held while a command runs; removes the lock file on drop.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(run_dir.to_path_buf())),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// One run directory plus the configuration and providers driving it.
pub struct Run {
    pub dir: PathBuf,
    pub config: PipelineConfig,
    pub providers: Providers,
    pub options: RunOptions,
}

impl Run {
    pub fn new(dir: impl Into<PathBuf>, config: PipelineConfig, options: RunOptions) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let providers = Providers::from_config(&config, &dir)?;
        Ok(Run {
            dir,
            config,
            providers,
            options,
        })
    }

    /// Uses caller-supplied providers instead of building them from the config.
    pub fn with_providers(dir: impl Into<PathBuf>, config: PipelineConfig, providers: Providers, options: RunOptions) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Run {
            dir,
            config,
            providers,
            options,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn manifest(&self) -> Result<RunManifest> {
        let digest = self.config.digest();
        match RunManifest::load(&self.dir)? {
            Some(mut m) => {
                if m.config_digest != digest {
                    if !self.options.force {
                        return Err(Error::StaleRun {
                            recorded: m.config_digest,
                            current: digest,
                        });
                    }
                    m.config_digest = digest;
                }
                Ok(m)
            }
            None => Ok(RunManifest {
                run_id: format!("run-{}-{}", digest, now()),
                config_digest: digest,
                tool_version: TOOL_VERSION.to_string(),
                stages: BTreeMap::new(),
            }),
        }
    }

    fn input_digests(&self, command: Command, manifest: &RunManifest) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (name, producer) in command.inputs(&self.config) {
            let path = self.path(&name);
            let missing = || Error::Dependency {
                command: producer.name().to_string(),
                artifact: name.clone(),
            };
            if !path.exists() {
                return Err(missing());
            }
            let digest = file_digest(&path)?;
            // the file must be the one its producer last recorded
            let recorded = manifest.stages.get(producer.name()).and_then(|r| r.outputs.get(&name));
            if recorded != Some(&digest) {
                return Err(missing());
            }
            out.insert(name, digest);
        }
        for path in command.external_inputs(&self.config) {
            let digest = file_digest(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            out.insert(path.display().to_string(), digest);
        }
        Ok(out)
    }

    fn up_to_date(&self, record: &StageRecord, digest: &str, inputs: &BTreeMap<String, String>) -> bool {
        record.config_digest == digest
            && record.inputs == *inputs
            && record
                .outputs
                .iter()
                .all(|(name, d)| file_digest(&self.path(name)).is_ok_and(|cur| cur == *d))
    }

    pub fn execute(&self, command: Command) -> Result<StageStatus> {
        let _lock = RunLock::acquire(&self.dir)?;
        self.execute_locked(command)
    }

    fn execute_locked(&self, command: Command) -> Result<StageStatus> {
        let mut manifest = self.manifest()?;
        let inputs = self.input_digests(command, &manifest)?;
        if let Some(rec) = manifest.stages.get(command.name()) {
            if !self.options.force && self.up_to_date(rec, &manifest.config_digest, &inputs) {
                log::info!("{command}: up to date");
                return Ok(StageStatus::UpToDate);
            }
        }
        log::info!("{command}: running");
        let started_at = now();
        let outputs = stages::run_stage(self, command).map_err(|e| match e {
            Error::Stage { .. } => e,
            other => Error::Stage {
                stage: command.name().to_string(),
                source: Box::new(other),
            },
        })?;
        let mut digests = BTreeMap::new();
        for name in outputs {
            digests.insert(name.clone(), file_digest(&self.path(&name))?);
        }
        manifest.stages.insert(
            command.name().to_string(),
            StageRecord {
                config_digest: manifest.config_digest.clone(),
                inputs,
                outputs: digests,
                started_at,
                finished_at: now(),
            },
        );
        jsonl::write_json(&self.path(MANIFEST), &manifest)?;
        let config_copy = toml::to_string(&self.config).map_err(|e| Error::Config(e.to_string()))?;
        jsonl::write_atomic(&self.path("config.toml"), config_copy.as_bytes())?;
        Ok(StageStatus::Ran)
    }

    /// Every command in pipeline order under one lock.
    pub fn run_all(&self) -> Result<Vec<(Command, StageStatus)>> {
        let _lock = RunLock::acquire(&self.dir)?;
        Command::ALL.into_iter().map(|c| Ok((c, self.execute_locked(c)?))).collect()
    }
}
