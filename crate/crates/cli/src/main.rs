//! Command-line driver: one subcommand per pipeline stage over a run directory.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hopbench_core::eval::Mode;
use hopbench_core::kg::graph::parse_k_list;
use hopbench_core::pipeline::{Command, PipelineConfig, Run, RunManifest, RunOptions, StageStatus};

#[derive(Parser)]
#[command(name = "hopbench", version, about = "Build and evaluate hub-shattered multi-hop QA benchmarks")]
struct Cli {
    /// Run directory holding artifacts and manifest.json.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,

    /// TOML config; defaults to the copy saved in the run directory.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Accept a config that differs from the manifest and rerun up-to-date stages.
    #[arg(long, global = true)]
    force: bool,

    /// Run stages sequentially instead of on the thread pool.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load and clean corpus files.
    Ingest,
    /// Split sentences and form semantic chunks.
    Chunk,
    /// Build the soft-clustered summary tree.
    Tree,
    /// Extract and align triplets into the original graph.
    Extract,
    /// Prune hubs into the shattered graph.
    Shatter {
        /// Frequency threshold, a number or `inf`.
        #[arg(long)]
        k: Option<String>,
    },
    /// Mine two-hop chains with hard negatives.
    Mine,
    /// Synthesize masked multiple-choice items.
    Synthesize,
    /// Ensemble quality adjudication.
    Adjudicate,
    /// Dataset statistics and lexical overlap.
    Stats,
    /// Answer every item with each configured model.
    Evaluate(EvalArgs),
    /// Accuracy, HNE and R3 per model and split.
    Report,
    /// Topology across a list of k thresholds.
    ShatterSweep {
        /// Comma-separated thresholds, e.g. `inf,200,100,50`.
        #[arg(long)]
        k: Option<String>,
    },
    /// Every stage in order.
    Run,
    /// Check manifest digests against the files on disk.
    Verify,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_parser = ["zero_shot", "rag"])]
    mode: Option<String>,
    /// Documents per RAG context, golden paragraph included.
    #[arg(long)]
    context_k: Option<usize>,
    /// Candidates kept by embedding similarity.
    #[arg(long)]
    coarse_pool: Option<usize>,
    /// Candidates kept after reranking.
    #[arg(long)]
    rerank_keep: Option<usize>,
    /// Restrict evaluation to one model.
    #[arg(long)]
    model: Option<String>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = match &cli.config {
        Some(p) => p.clone(),
        None => cli.run_dir.join("config.toml"),
    };
    let mut config = PipelineConfig::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if cli.sequential {
        config.execution = hopbench_core::Execution::Sequential;
    }
    match &cli.command {
        Cmd::Shatter { k: Some(k) } => config.graph.k_threshold = k.parse()?,
        Cmd::ShatterSweep { k: Some(k) } => config.graph.sweep = parse_k_list(k)?,
        Cmd::Evaluate(a) => {
            let r = &mut config.evaluation.retrieval;
            if let Some(mode) = &a.mode {
                config.evaluation.modes = vec![mode.parse::<Mode>()?];
            }
            r.context_size = a.context_k.unwrap_or(r.context_size);
            r.coarse_pool_size = a.coarse_pool.unwrap_or(r.coarse_pool_size);
            r.rerank_keep = a.rerank_keep.unwrap_or(r.rerank_keep);
            if let Some(m) = &a.model {
                config.evaluation.models = vec![m.clone()];
            }
        }
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

fn stage(cmd: &Cmd) -> Option<Command> {
    Some(match cmd {
        Cmd::Ingest => Command::Ingest,
        Cmd::Chunk => Command::Chunk,
        Cmd::Tree => Command::Tree,
        Cmd::Extract => Command::Extract,
        Cmd::Shatter { .. } => Command::Shatter,
        Cmd::Mine => Command::Mine,
        Cmd::Synthesize => Command::Synthesize,
        Cmd::Adjudicate => Command::Adjudicate,
        Cmd::Stats => Command::Stats,
        Cmd::Evaluate(_) => Command::Evaluate,
        Cmd::Report => Command::Report,
        Cmd::ShatterSweep { .. } => Command::ShatterSweep,
        Cmd::Run | Cmd::Verify => return None,
    })
}

fn describe(command: Command, status: StageStatus) {
    match status {
        StageStatus::Ran => println!("{command}: done"),
        StageStatus::UpToDate => println!("{command}: up to date"),
    }
}

fn main_inner(cli: &Cli) -> Result<()> {
    if let Cmd::Verify = cli.command {
        let manifest = RunManifest::load(&cli.run_dir)?.context("no manifest.json in the run directory")?;
        manifest.verify(&cli.run_dir)?;
        println!("{}: {} stages verified", manifest.run_id, manifest.stages.len());
        return Ok(());
    }
    let config = load_config(cli)?;
    let run = Run::new(&cli.run_dir, config, RunOptions { force: cli.force })?;
    match stage(&cli.command) {
        Some(command) => describe(command, run.execute(command)?),
        None => {
            for (command, status) in run.run_all()? {
                describe(command, status);
            }
        }
    }
    if matches!(cli.command, Cmd::Report | Cmd::Run) {
        print!("{}", std::fs::read_to_string(run.path("report.txt"))?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<hopbench_core::Error>())
                .map_or(1, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
