//! Subcommand arguments and their implementations.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dialogue_cache::harness::{
    extract_all_pairs, format_corpus, lambda_sweep, parse_corpus, prefetch_replay, prefetch_table, replay, seed,
    synthetic_corpus, write_log, ReplayOptions, Split, SweepComponents, LAMBDA_GRID,
};
use dialogue_cache::{EngineConfig, PromptResponsePair, VectorStore};

use crate::components::{self, ModelEndpoints, ReferenceSettings};
use crate::service::{self, ServiceConfig};

#[derive(Debug, Parser)]
#[command(
    name = "dialogue-cache",
    version,
    about = "Semantic response cache for dialogue systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode every (history, response) pair of a corpus into a new snapshot.
    Seed(SeedArgs),
    /// Replay a test corpus against a snapshot and report candidate-rank usage.
    Replay(ReplayArgs),
    /// Replay with the last utterance truncated to a fraction of its words.
    Prefetch(PrefetchArgs),
    /// Seed and replay once per decay value.
    Sweep(SweepArgs),
    /// Write a synthetic corpus in the `__eou__` line format.
    Synth(SynthArgs),
    /// Serve the cache over HTTP.
    Serve(ServeArgs),
    /// Print a snapshot's header.
    SnapshotInfo(SnapshotInfoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Base URL of an encoder service; the built-in reference encoder is used otherwise.
    #[arg(long)]
    pub encoder_url: Option<String>,
    /// Base URL of a coherence evaluator; the similarity proxy is used otherwise.
    #[arg(long)]
    pub evaluator_url: Option<String>,
    /// Base URL of a response generator; the echo generator is used otherwise.
    #[arg(long)]
    pub generator_url: Option<String>,
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
}

impl ModelArgs {
    fn endpoints(&self) -> ModelEndpoints {
        ModelEndpoints {
            encoder: self.encoder_url.clone(),
            evaluator: self.evaluator_url.clone(),
            generator: self.generator_url.clone(),
            timeout_secs: self.timeout_secs,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReferenceArgs {
    /// Dimension of the reference encoder.
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    /// Hash seed of the reference encoder.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ReferenceArgs {
    fn settings(&self) -> ReferenceSettings {
        ReferenceSettings {
            dim: self.dim,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = EngineConfig::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub reference: ReferenceArgs,
    #[arg(long)]
    pub encoder_url: Option<String>,
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Test corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long, default_value_t = EngineConfig::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = EngineConfig::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Do not add generated responses to the cache during the run.
    #[arg(long)]
    pub frozen_cache: bool,
    /// Write the JSON report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Leave wall-clock fields out of the report and log.
    #[arg(long)]
    pub no_timings: bool,
    /// Write the per-request log (NDJSON) here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub models: ModelArgs,
}

impl ReplayArgs {
    fn options(&self) -> ReplayOptions {
        ReplayOptions {
            frozen_cache: self.frozen_cache,
            include_timings: !self.no_timings,
        }
    }
}

#[derive(Debug, Args)]
pub struct PrefetchArgs {
    #[command(flatten)]
    pub replay: ReplayArgs,
    /// Fractions of the last utterance to keep.
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.9,0.8,0.7,0.6")]
    pub splits: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = LAMBDA_GRID)]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = EngineConfig::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = EngineConfig::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub frozen_cache: bool,
    #[arg(long)]
    pub no_timings: bool,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub reference: ReferenceArgs,
    #[command(flatten)]
    pub models: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub conversations: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Save the store to the configured snapshot path on shutdown.
    #[arg(long)]
    pub snapshot_on_exit: bool,
}

#[derive(Debug, Args)]
pub struct SnapshotInfoArgs {
    pub path: PathBuf,
    #[arg(long)]
    pub json: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Seed(a) => run_seed(&a),
        Command::Replay(a) => run_replay(&a),
        Command::Prefetch(a) => run_prefetch(&a),
        Command::Sweep(a) => run_sweep(&a),
        Command::Synth(a) => run_synth(&a),
        Command::Serve(a) => run_serve(&a),
        Command::SnapshotInfo(a) => run_snapshot_info(&a),
    }
}

fn load_pairs(path: &Path, split: Split) -> Result<Vec<PromptResponsePair>> {
    let convs = parse_corpus(path, split).with_context(|| format!("reading corpus {}", path.display()))?;
    Ok(extract_all_pairs(&convs))
}

fn run_seed(a: &SeedArgs) -> Result<()> {
    let pairs = load_pairs(&a.corpus, Split::Train)?;
    let endpoints = ModelEndpoints {
        encoder: a.encoder_url.clone(),
        timeout_secs: a.timeout_secs,
        ..ModelEndpoints::default()
    };
    let encoder = components::encoder_for_new_store(&endpoints, a.reference.settings())?;
    let d = encoder.descriptor();
    let store = VectorStore::new(d.dim(), a.lambda, d.id())?;
    let n = seed(&pairs, &store, encoder.as_ref())?;
    store
        .save_snapshot(&a.out)
        .with_context(|| format!("writing snapshot {}", a.out.display()))?;
    println!("seeded {n} pairs");
    Ok(())
}

fn engine_for(a: &ReplayArgs) -> Result<dialogue_cache::CacheEngine> {
    let store = VectorStore::load_snapshot(&a.snapshot)
        .with_context(|| format!("loading snapshot {}", a.snapshot.display()))?;
    let config = EngineConfig::new(store.meta().lambda, a.k, a.threshold, "", "")?;
    components::engine_for_store(Arc::new(store), config, &a.models.endpoints())
}

fn run_replay(a: &ReplayArgs) -> Result<()> {
    let test = load_pairs(&a.corpus, Split::Test)?;
    let engine = engine_for(a)?;
    let out = replay(&test, &engine, &a.options())?;
    print!("{}", out.report.to_table());
    if let Some(path) = &a.json {
        out.report.write_json(path)?;
    }
    if let Some(path) = &a.log {
        write_log(&out.log, path)?;
    }
    Ok(())
}

fn run_prefetch(a: &PrefetchArgs) -> Result<()> {
    if a.replay.log.is_some() {
        bail!("--log is not supported by prefetch");
    }
    let test = load_pairs(&a.replay.corpus, Split::Test)?;
    let engine = engine_for(&a.replay)?;
    let reports = prefetch_replay(&test, &engine, &a.splits, &a.replay.options())?;
    print!("{}", prefetch_table(&reports));
    if let Some(path) = &a.replay.json {
        write_json(path, &reports)?;
    }
    Ok(())
}

fn run_sweep(a: &SweepArgs) -> Result<()> {
    let train = load_pairs(&a.train, Split::Train)?;
    let test = load_pairs(&a.test, Split::Test)?;
    let endpoints = a.models.endpoints();
    let encoder = components::encoder_for_new_store(&endpoints, a.reference.settings())?;
    // The proxy evaluator keeps one history weighting across the sweep so only retrieval varies.
    let evaluator = components::evaluator(&encoder, EngineConfig::DEFAULT_LAMBDA, &endpoints)?;
    let comps = SweepComponents {
        encoder,
        evaluator,
        generator: components::generator(&endpoints),
        k: a.k,
        threshold: a.threshold,
    };
    let options = ReplayOptions {
        frozen_cache: a.frozen_cache,
        include_timings: !a.no_timings,
    };
    let reports = lambda_sweep(&train, &test, &a.lambdas, &comps, &options)?;
    for (i, r) in reports.iter().enumerate() {
        let table = r.to_table();
        // Print the header once.
        if i == 0 {
            print!("{table}");
        } else {
            print!(
                "{}",
                table.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>()
            );
        }
    }
    if let Some(path) = &a.json {
        write_json(path, &reports)?;
    }
    Ok(())
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    if a.conversations == 0 {
        bail!("--conversations must be at least 1");
    }
    let convs = synthetic_corpus(a.conversations, a.seed, Split::Train);
    std::fs::write(&a.out, format_corpus(&convs)).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} conversations", convs.len());
    Ok(())
}

fn run_serve(a: &ServeArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut config: ServiceConfig = toml::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    config.snapshot_on_exit |= a.snapshot_on_exit;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(service::serve(config))
}

fn run_snapshot_info(a: &SnapshotInfoArgs) -> Result<()> {
    let (meta, count) =
        VectorStore::read_snapshot_header(&a.path).with_context(|| format!("reading snapshot {}", a.path.display()))?;
    if a.json {
        let v = serde_json::json!({
            "dim": meta.dim,
            "count": count,
            "lambda": meta.lambda,
            "encoder_id": meta.encoder_id,
        });
        println!("{v}");
    } else {
        println!("dim: {}", meta.dim);
        println!("count: {count}");
        println!("lambda: {}", meta.lambda);
        println!("encoder_id: {}", meta.encoder_id);
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
