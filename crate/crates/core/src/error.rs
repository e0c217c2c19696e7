use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("provider fault: {0}")]
    ProviderFault(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("extraction failed for node {node_id}: {reason}")]
    Extraction { node_id: String, reason: String },

    #[error("no hard negative for chain {chain_id}: {reason}")]
    NoHardNegative { chain_id: String, reason: String },

    #[error("item discarded for chain {chain_id}: {reason}")]
    ItemDiscarded { chain_id: String, reason: String },

    #[error("adjudication failed for {qa_id}: every ensemble member returned unparseable output")]
    Adjudication { qa_id: String },

    #[error("rate undefined: {0}")]
    UndefinedRate(String),

    #[error("context error for {qa_id}: {reason}")]
    Context { qa_id: String, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing upstream artifact {artifact}; run `{command}` first")]
    Dependency { command: String, artifact: String },

    #[error("config digest {current} does not match run manifest {recorded}; pass --force to rerun")]
    StaleRun { recorded: String, current: String },

    #[error("run directory {0} is locked by another command")]
    Locked(PathBuf),

    #[error("{path}: schema `{found}` v{found_version} cannot be read as `{expected}` v{expected_version}")]
    Migration {
        path: PathBuf,
        expected: String,
        expected_version: u32,
        found: String,
        found_version: u32,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors worth retrying against a remote provider.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }

    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Validation(_)
            | Error::Config(_)
            | Error::StaleRun { .. }
            | Error::Migration { .. }
            | Error::Parse { .. }
            | Error::UndefinedRate(_)
            | Error::DegenerateFit(_) => 2,
            Error::Dependency { .. } => 3,
            Error::Transport(_) | Error::Protocol(_) | Error::ProviderFault(_) => 4,
            _ => 1,
        }
    }
}
