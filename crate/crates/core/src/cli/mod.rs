//! Command-line front end: one pipeline stage per subcommand, handing off
//! through files with content-hash lineage records.

mod config;
pub mod lineage;
pub mod serve;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use config::PipelineConfig;
use lineage::{guard_outputs, Lineage};

use crate::backend::{
    connect, IdentityReranker, JudgeBackend, RemoteJudge, RemoteReranker, RerankBackend, StubJudge,
    StubReranker,
};
use crate::contrastive::{train_toy, ToyConfig};
use crate::corpus::{ensure_unique_ids, ingest_pairs, prefilter_corpus, PairRecord};
use crate::curation::{
    audit_pairs, build_negative_pools, consistency_filter, AuditConfig, AuditItem, CuratedPair,
    FilterParams, MiningParams, NegativePool,
};
use crate::embedder::{
    embed_corpus_resume, EmbedOptions, EmbedProgress, EmbeddingProvider, RemoteProvider, Side,
    StubProvider, VectorStore,
};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::localize::{
    eval_localization, file_rollup, localize, FunctionRecord, GoldLabels, HitMode, LocalizationKs,
    Prediction, SnapshotIndex,
};
use crate::ranker::{
    compute_metrics, read_qrels, read_run, search_batch, write_qrels, write_run, MetricSpec, Qrels,
};
use crate::rerank::{gen_listwise_data, sliding_rerank_batch, ListwiseParams, RerankParams};
use crate::sampler::{BatchParams, BatchStream, CurriculumSchedule};
use crate::simgraph::{compute_neighbors, NeighborParams, SimilarityCache};
use crate::synth::{snapshot_fixture, topic_corpus, SynthConfig};
use crate::toy::toy_split;

#[derive(Debug, Parser)]
#[command(
    name = "codecurate",
    version,
    about = "Curate (text, code) pairs, mine hard negatives and evaluate retrieval"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Directory for artifacts without an explicit path.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read and prefilter a pair file.
    Ingest(IngestArgs),
    /// Embed both sides of the corpus.
    Embed(EmbedArgs),
    /// Exact top-K′ code neighbors of every text.
    Neighbors(NeighborsArgs),
    /// Dual consistency filtering.
    Filter(FilterArgs),
    /// Hard-negative pools with false-negative removal.
    Mine(MineArgs),
    /// Curriculum training batches.
    Sample(SampleArgs),
    /// Train the toy bi-encoder and write its trace.
    TrainToy(TrainToyArgs),
    /// Dense retrieval of every text over the code store.
    Retrieve(RetrieveArgs),
    /// Sliding-window listwise reranking of a run.
    Rerank(RerankArgs),
    /// Listwise reranker training instances.
    GenListwise(ListwiseArgs),
    /// Rank snapshot functions and files for issues.
    Localize(LocalizeArgs),
    /// Score a run against qrels, or localization predictions against gold.
    Eval(EvalArgs),
    /// Judge-based precision audit of pair datasets.
    Audit(AuditArgs),
    #[command(hide = true)]
    Synth(SynthArgs),
    #[command(hide = true)]
    ServeStub(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Language of records without a `language` field.
    #[arg(long, default_value = "unknown")]
    pub language: String,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub decisions: Option<PathBuf>,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub min_english_ratio: Option<f64>,
    #[arg(long)]
    pub min_text_tokens: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub text_store: Option<PathBuf>,
    #[arg(long)]
    pub code_store: Option<PathBuf>,
    /// `stub`, `http(s)://host:port` or `cmd:<program> <args>`.
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct NeighborsArgs {
    #[arg(long)]
    pub text_store: Option<PathBuf>,
    #[arg(long)]
    pub code_store: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub k_prime: Option<usize>,
    #[arg(long)]
    pub block: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub curated: Option<PathBuf>,
    #[arg(long)]
    pub dropped: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub delta: Option<f32>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub curated: Option<PathBuf>,
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub pool_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub curated: Option<PathBuf>,
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[arg(long)]
    pub batches: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub tau_start: Option<f64>,
    #[arg(long)]
    pub tau_end: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub held_out: Option<PathBuf>,
    #[arg(long)]
    pub curated: Option<PathBuf>,
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Train on every corpus pair with in-batch negatives only.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub text_store: Option<PathBuf>,
    #[arg(long)]
    pub code_store: Option<PathBuf>,
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Qrels pairing every text with the code of the same record.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub reranked: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// `identity`, `stub`, `http(s)://...` or `cmd:...`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ListwiseArgs {
    #[arg(long)]
    pub curated: Option<PathBuf>,
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub instances: Option<PathBuf>,
    #[arg(long)]
    pub instances_per_tuple: Option<usize>,
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long)]
    pub max_size: Option<usize>,
    #[arg(long)]
    pub min_s_pos: Option<f32>,
    #[arg(long)]
    pub pool_top: Option<usize>,
    /// `identity`, `stub`, `http(s)://...` or `cmd:...`.
    #[arg(long)]
    pub teacher: Option<String>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Issue file (`instance_id`, `issue` per line); defaults to the gold file.
    #[arg(long)]
    pub issues: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// `none`, `identity`, `stub`, `http(s)://...` or `cmd:...`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Score localization predictions instead of a retrieval run.
    #[arg(long)]
    pub localization: bool,
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// `any` or `complete`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// `NAME=PATH` pair file; repeatable. Defaults to the corpus.
    #[arg(long = "dataset")]
    pub datasets: Vec<String>,
    #[arg(long)]
    pub audit: Option<PathBuf>,
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    /// `stub`, `http(s)://...` or `cmd:...`.
    #[arg(long)]
    pub judge: Option<String>,
    #[arg(long)]
    pub stub_threshold: Option<f32>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub held_out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub topics: usize,
    #[arg(long, default_value_t = 12)]
    pub pairs_per_topic: usize,
    #[arg(long, default_value_t = 2)]
    pub held_out_per_topic: usize,
    #[arg(long, default_value_t = 0.2)]
    pub noise_rate: f64,
    /// Also write a snapshot and gold file of this many issues.
    #[arg(long)]
    pub issues: Option<usize>,
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub judge_threshold: f32,
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

/// Resolves artifact paths: flag, then config, then `workdir/<default>`.
struct Paths {
    workdir: PathBuf,
}

impl Paths {
    fn pick(&self, flag: &Option<PathBuf>, configured: &Option<PathBuf>, default: &str) -> PathBuf {
        flag.clone()
            .or_else(|| configured.clone())
            .unwrap_or_else(|| self.workdir.join(default))
    }
}

struct Ctx {
    cfg: PipelineConfig,
    paths: Paths,
    force: bool,
}

impl Ctx {
    fn log_config(&self, command: &str) {
        log::info!("command = {command}, seed = {}", self.cfg.seed);
        match toml::to_string(&self.cfg) {
            Ok(t) => log::info!("resolved config:\n{t}"),
            Err(_) => log::info!("resolved config: {:?}", self.cfg),
        }
    }
}

fn timeout(secs: u64) -> Duration {
    Duration::from_secs(secs.max(1))
}

fn embedding_provider(
    spec: &str,
    dim: usize,
    timeout_secs: u64,
) -> Result<Box<dyn EmbeddingProvider>> {
    match spec {
        "stub" => Ok(Box::new(StubProvider { dim })),
        other => Ok(Box::new(RemoteProvider::new(connect(
            other,
            timeout(timeout_secs),
        )?))),
    }
}

fn rerank_backend(spec: &str, dim: usize, timeout_secs: u64) -> Result<Box<dyn RerankBackend>> {
    match spec {
        "identity" => Ok(Box::new(IdentityReranker)),
        "stub" => Ok(Box::new(StubReranker { dim })),
        other => Ok(Box::new(RemoteReranker(connect(
            other,
            timeout(timeout_secs),
        )?))),
    }
}

fn judge_backend(
    spec: &str,
    dim: usize,
    threshold: f32,
    timeout_secs: u64,
) -> Result<Box<dyn JudgeBackend>> {
    match spec {
        "stub" => Ok(Box::new(StubJudge { dim, threshold })),
        other => Ok(Box::new(RemoteJudge(connect(
            other,
            timeout(timeout_secs),
        )?))),
    }
}

fn text_maps(records: &[PairRecord]) -> (HashMap<String, String>, HashMap<String, String>) {
    let texts = records
        .iter()
        .map(|r| (r.id.clone(), r.text.clone()))
        .collect();
    let codes = records
        .iter()
        .map(|r| (r.id.clone(), r.code.clone()))
        .collect();
    (texts, codes)
}

/// Parses arguments, runs one command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            log::warn!("thread pool already initialized; --threads ignored");
        }
    }
    let workdir = cli
        .workdir
        .clone()
        .or_else(|| cfg.paths.workdir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut ctx = Ctx {
        cfg,
        paths: Paths { workdir },
        force: cli.force,
    };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&mut ctx, a),
        Command::Embed(a) => cmd_embed(&mut ctx, a),
        Command::Neighbors(a) => cmd_neighbors(&mut ctx, a),
        Command::Filter(a) => cmd_filter(&mut ctx, a),
        Command::Mine(a) => cmd_mine(&mut ctx, a),
        Command::Sample(a) => cmd_sample(&mut ctx, a),
        Command::TrainToy(a) => cmd_train_toy(&mut ctx, a),
        Command::Retrieve(a) => cmd_retrieve(&mut ctx, a),
        Command::Rerank(a) => cmd_rerank(&mut ctx, a),
        Command::GenListwise(a) => cmd_listwise(&mut ctx, a),
        Command::Localize(a) => cmd_localize(&mut ctx, a),
        Command::Eval(a) => cmd_eval(&mut ctx, a),
        Command::Audit(a) => cmd_audit(&mut ctx, a),
        Command::Synth(a) => cmd_synth(&mut ctx, a),
        Command::ServeStub(a) => {
            let server = serve::StubServer {
                dim: a.dim,
                judge_threshold: a.judge_threshold,
            };
            let stdin = std::io::stdin();
            server
                .serve(stdin.lock(), std::io::stdout())
                .map_err(|e| Error::Backend(format!("stub server: {e}")))
        }
    }
}

fn cmd_ingest(ctx: &mut Ctx, a: IngestArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let pairs = ctx.paths.pick(&a.pairs, &p.pairs, "pairs.jsonl");
    let corpus_path = ctx.paths.pick(&a.corpus, &p.corpus, "corpus.jsonl");
    let decisions = ctx
        .paths
        .pick(&a.decisions, &p.decisions, "decisions.jsonl");
    let stats = ctx.paths.pick(&a.stats, &p.stats, "stats.json");
    set(
        &mut ctx.cfg.prefilter.min_english_ratio,
        a.min_english_ratio,
    );
    set(&mut ctx.cfg.prefilter.min_text_tokens, a.min_text_tokens);
    ctx.log_config("ingest");
    guard_outputs(&[&corpus_path, &decisions, &stats], ctx.force)?;

    let mut lin = Lineage::new();
    lin.raw(&pairs, true)?;
    let corpus = prefilter_corpus(ingest_pairs(&pairs, &a.language)?, &ctx.cfg.prefilter)?;
    ensure_unique_ids(&corpus)?;
    jsonl::write(&corpus_path, &corpus.records)?;
    jsonl::write(&decisions, &corpus.decisions)?;
    jsonl::write_json(&stats, &corpus.stats)?;
    lin.record(
        "ingest",
        ctx.cfg.seed,
        json!({"language": a.language, "prefilter": ctx.cfg.prefilter}),
        &[&corpus_path, &decisions, &stats],
    )?;
    print!("{}", corpus.stats.render_table());
    Ok(())
}

fn cmd_embed(ctx: &mut Ctx, a: EmbedArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let corpus_path = ctx.paths.pick(&a.corpus, &p.corpus, "corpus.jsonl");
    let text_path = ctx.paths.pick(&a.text_store, &p.text_store, "text.vec");
    let code_path = ctx.paths.pick(&a.code_store, &p.code_store, "code.vec");
    let explicit_dim = a.dim;
    let e = &mut ctx.cfg.embed;
    set(&mut e.provider, a.provider);
    set(&mut e.dim, a.dim);
    set(&mut e.batch_size, a.batch_size);
    set(&mut e.max_in_flight, a.max_in_flight);
    set(&mut e.timeout_secs, a.timeout_secs);
    ctx.log_config("embed");
    guard_outputs(&[&text_path, &code_path], ctx.force)?;

    let mut lin = Lineage::new();
    lin.upstream(&corpus_path, "ingest")?;
    let records: Vec<PairRecord> = jsonl::read(&corpus_path)?;
    let e = &ctx.cfg.embed;
    let provider = embedding_provider(&e.provider, e.dim, e.timeout_secs)?;
    let opts = EmbedOptions {
        batch_size: e.batch_size,
        max_in_flight: e.max_in_flight,
        // remote providers report their own dimension; a --dim flag must agree with it
        expected_dim: if e.provider == "stub" {
            None
        } else {
            explicit_dim
        },
    };
    let texts = embed_with_retries(&records, provider.as_ref(), Side::Text, &opts, e.retries)?;
    let codes = embed_with_retries(&records, provider.as_ref(), Side::Code, &opts, e.retries)?;
    texts.save(&text_path)?;
    codes.save(&code_path)?;
    lin.record(
        "embed",
        ctx.cfg.seed,
        json!({"embed": e}),
        &[&text_path, &code_path],
    )?;
    log::info!(
        "embedded {} records at dimension {}",
        texts.len(),
        texts.dim()
    );
    Ok(())
}

fn embed_with_retries(
    records: &[PairRecord],
    provider: &dyn EmbeddingProvider,
    side: Side,
    opts: &EmbedOptions,
    retries: usize,
) -> Result<VectorStore> {
    let mut progress = EmbedProgress::default();
    let mut attempt = 0;
    loop {
        match embed_corpus_resume(records, provider, side, opts, &mut progress) {
            Err(Error::EmbedInterrupted {
                completed,
                total,
                message,
            }) if attempt < retries => {
                attempt += 1;
                log::warn!("{} embedding stopped at {completed}/{total} ({message}); resuming, attempt {attempt} of {retries}", side.as_str());
            }
            other => return other,
        }
    }
}

fn cmd_neighbors(ctx: &mut Ctx, a: NeighborsArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let text_path = ctx.paths.pick(&a.text_store, &p.text_store, "text.vec");
    let code_path = ctx.paths.pick(&a.code_store, &p.code_store, "code.vec");
    let cache_path = ctx.paths.pick(&a.cache, &p.cache, "neighbors.bin");
    set(&mut ctx.cfg.neighbors.k_prime, a.k_prime);
    set(&mut ctx.cfg.neighbors.block, a.block);
    ctx.log_config("neighbors");
    guard_outputs(&[&cache_path], ctx.force)?;

    let mut lin = Lineage::new();
    lin.upstream(&text_path, "embed")?;
    lin.upstream(&code_path, "embed")?;
    let texts = VectorStore::load(&text_path)?;
    let codes = VectorStore::load(&code_path)?;
    let n = &ctx.cfg.neighbors;
    let params =
        NeighborParams::new(n.k_prime, n.block).requiring(ctx.cfg.filter.k, ctx.cfg.mine.pool_size);
    let cache = compute_neighbors(&texts, &codes, &params)?;
    cache.save(&cache_path)?;
    lin.record(
        "neighbors",
        ctx.cfg.seed,
        json!({"neighbors": n}),
        &[&cache_path],
    )?;
    log::info!(
        "stored top-{} neighbors for {} texts",
        cache.k_prime,
        cache.len()
    );
    Ok(())
}

fn cmd_filter(ctx: &mut Ctx, a: FilterArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let cache_path = ctx.paths.pick(&a.cache, &p.cache, "neighbors.bin");
    let corpus_path = ctx.paths.pick(&a.corpus, &p.corpus, "corpus.jsonl");
    let curated_path = ctx.paths.pick(&a.curated, &p.curated, "curated.jsonl");
    let dropped_path = ctx.paths.pick(&a.dropped, &p.dropped, "dropped.jsonl");
    set(&mut ctx.cfg.filter.k, a.k);
    set(&mut ctx.cfg.filter.delta, a.delta);
    ctx.log_config("filter");
    guard_outputs(&[&curated_path, &dropped_path], ctx.force)?;

    let mut lin = Lineage::new();
    lin.upstream(&cache_path, "neighbors")?;
    lin.upstream(&corpus_path, "ingest")?;
    let cache = SimilarityCache::load(&cache_path)?;
    let records: Vec<PairRecord> = jsonl::read(&corpus_path)?;
    let ids: HashSet<String> = records.into_iter().map(|r| r.id).collect();
    let params = FilterParams {
        k: ctx.cfg.filter.k,
        delta: ctx.cfg.filter.delta,
    };
    let outcome = consistency_filter(&cache, &ids, &params)?;
    jsonl::write(&curated_path, &outcome.kept)?;
    jsonl::write(&dropped_path, &outcome.dropped)?;
    lin.record(
        "filter",
        ctx.cfg.seed,
        json!({"filter": params}),
        &[&curated_path, &dropped_path],
    )?;
    println!("{}", outcome.summary());
    Ok(())
}

fn cmd_mine(ctx: &mut Ctx, a: MineArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let cache_path = ctx.paths.pick(&a.cache, &p.cache, "neighbors.bin");
    let curated_path = ctx.paths.pick(&a.curated, &p.curated, "curated.jsonl");
    let pools_path = ctx.paths.pick(&a.pools, &p.pools, "pools.jsonl");
    set(&mut ctx.cfg.mine.gamma, a.gamma);
    set(&mut ctx.cfg.mine.pool_size, a.pool_size);
    ctx.log_config("mine");
    guard_outputs(&[&pools_path], ctx.force)?;

    let mut lin = Lineage::new();
    lin.upstream(&cache_path, "neighbors")?;
    lin.upstream(&curated_path, "filter")?;
    let cache = SimilarityCache::load(&cache_path)?;
    let curated: Vec<CuratedPair> = jsonl::read(&curated_path)?;
    let params = MiningParams {
        gamma: ctx.cfg.mine.gamma,
        pool_size: ctx.cfg.mine.pool_size,
        seed: ctx.cfg.seed,
    };
    let pools = build_negative_pools(&cache, &curated, &params)?;
    jsonl::write(&pools_path, &pools)?;
    lin.record(
        "mine",
        ctx.cfg.seed,
        json!({"mine": params}),
        &[&pools_path],
    )?;
    let fallback = pools.iter().filter(|p| p.fallback_used).count();
    println!("{} pools, {} from fallback sampling", pools.len(), fallback);
    Ok(())
}

fn cmd_sample(ctx: &mut Ctx, a: SampleArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let curated_path = ctx.paths.pick(&a.curated, &p.curated, "curated.jsonl");
    let pools_path = ctx.paths.pick(&a.pools, &p.pools, "pools.jsonl");
    let batches_path = ctx.paths.pick(&a.batches, &p.batches, "batches.jsonl");
    let s = &mut ctx.cfg.sample;
    set(&mut s.batch_size, a.batch_size);
    set(&mut s.negatives, a.negatives);
    set(&mut s.steps, a.steps);
    set(&mut s.tau_start, a.tau_start);
    set(&mut s.tau_end, a.tau_end);
    ctx.log_config("sample");
    guard_outputs(&[&batches_path], ctx.force)?;

    let mut lin = Lineage::new();
    lin.upstream(&curated_path, "filter")?;
    lin.upstream(&pools_path, "mine")?;
    let curated: Vec<CuratedPair> = jsonl::read(&curated_path)?;
    let pools: Vec<NegativePool> = jsonl::read(&pools_path)?;
    let s = &ctx.cfg.sample;
    let schedule = CurriculumSchedule {
        tau_start: s.tau_start,
        tau_end: s.tau_end,
        total_steps: s.steps,
    };
    let params = BatchParams {
        batch_size: s.batch_size,
        negatives: s.negatives,
        seed: ctx.cfg.seed,
    };
    let stream = BatchStream::new(&curated, &pools, schedule, params)?;
    let n = jsonl::write_results(&batches_path, stream)?;
    lin.record(
        "sample",
        ctx.cfg.seed,
        json!({"sample": s}),
        &[&batches_path],
    )?;
    println!("{n} batches of {} queries", s.batch_size);
    Ok(())
}

fn cmd_train_toy(ctx: &mut Ctx, a: TrainToyArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let corpus_path = ctx.paths.pick(&a.corpus, &p.corpus, "corpus.jsonl");
    let held_path = ctx.paths.pick(&a.held_out, &p.held_out, "held_out.jsonl");
    let curated_path = ctx.paths.pick(&a.curated, &p.curated, "curated.jsonl");
    let pools_path = ctx.paths.pick(&a.pools, &p.pools, "pools.jsonl");
    let trace_path = ctx.paths.pick(&a.trace, &p.trace, "trace.jsonl");
    let t = &mut ctx.cfg.toy;
    set(&mut t.steps, a.steps);
    set(&mut t.lr, a.lr);
    set(&mut t.tau, a.tau);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.negatives, a.negatives);
    set(&mut t.feature_dim, a.feature_dim);
    set(&mut t.embed_dim, a.embed_dim);
    set(&mut t.eval_every, a.eval_every);
    t.seed = ctx.cfg.seed;
    ctx.log_config("train-toy");
    guard_outputs(&[&trace_path], ctx.force)?;

    let mut lin = Lineage::new();
    lin.upstream(&corpus_path, "ingest")?;
    lin.raw(&held_path, false)?;
    let records: Vec<PairRecord> = jsonl::read(&corpus_path)?;
    let held: Vec<PairRecord> = jsonl::read(&held_path)?;
    let dim = ctx.cfg.toy.feature_dim;
    let train = toy_split(&records.iter().collect::<Vec<_>>(), dim)?;
    let held_split = toy_split(&held.iter().collect::<Vec<_>>(), dim)?;
    let (curated, pools, cfg) = if a.baseline {
        let all: Vec<CuratedPair> = records
            .iter()
            .map(|r| CuratedPair {
                query_id: r.id.clone(),
                positive_id: r.id.clone(),
                s_pos: 0.0,
                rank: 0,
            })
            .collect();
        let cfg = ToyConfig {
            negatives: 0,
            ..ctx.cfg.toy
        };
        (all, Vec::new(), cfg)
    } else {
        lin.upstream(&curated_path, "filter")?;
        lin.upstream(&pools_path, "mine")?;
        let curated: Vec<CuratedPair> = jsonl::read(&curated_path)?;
        let pools: Vec<NegativePool> = jsonl::read(&pools_path)?;
        (curated, pools, ctx.cfg.toy)
    };
    let outcome = train_toy(&cfg, &train, &curated, &pools, &held_split)?;
    jsonl::write(&trace_path, &outcome.trace)?;
    lin.record(
        "train-toy",
        ctx.cfg.seed,
        json!({"toy": cfg, "baseline": a.baseline}),
        &[&trace_path],
    )?;
    println!(
        "held-out MRR@10 {:.4} after {} steps on {} pairs",
        outcome.final_mrr,
        cfg.steps,
        curated.len()
    );
    Ok(())
}

fn cmd_retrieve(ctx: &mut Ctx, a: RetrieveArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let text_path = ctx.paths.pick(&a.text_store, &p.text_store, "text.vec");
    let code_path = ctx.paths.pick(&a.code_store, &p.code_store, "code.vec");
    let run_path = ctx.paths.pick(&a.run, &p.run, "run.trec");
    let qrels_path = ctx.paths.pick(&a.qrels, &p.qrels, "qrels.txt");
    set(&mut ctx.cfg.retrieve.k, a.k);
    ctx.log_config("retrieve");
    guard_outputs(&[&run_path, &qrels_path], ctx.force)?;

    let mut lin = Lineage::new();
    lin.upstream(&text_path, "embed")?;
    lin.upstream(&code_path, "embed")?;
    let texts = VectorStore::load(&text_path)?;
    let codes = VectorStore::load(&code_path)?;
    let runs = search_batch(&codes, &texts, ctx.cfg.retrieve.k)?;
    write_run(&run_path, &runs, "dense")?;
    let qrels: Qrels = texts
        .ids()
        .iter()
        .filter(|id| codes.index_of(id).is_some())
        .map(|id| (id.clone(), BTreeSet::from([id.clone()])))
        .collect();
    write_qrels(&qrels_path, &qrels)?;
    lin.record(
        "retrieve",
        ctx.cfg.seed,
        json!({"retrieve": ctx.cfg.retrieve}),
        &[&run_path, &qrels_path],
    )?;
    log::info!(
        "retrieved top-{} for {} queries",
        ctx.cfg.retrieve.k,
        runs.len()
    );
    Ok(())
}

fn cmd_rerank(ctx: &mut Ctx, a: RerankArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let run_path = ctx.paths.pick(&a.run, &p.run, "run.trec");
    let corpus_path = ctx.paths.pick(&a.corpus, &p.corpus, "corpus.jsonl");
    let out_path = ctx.paths.pick(&a.reranked, &p.reranked, "reranked.trec");
    let r = &mut ctx.cfg.rerank;
    set(&mut r.window, a.window);
    set(&mut r.stride, a.stride);
    set(&mut r.depth, a.depth);
    set(&mut r.backend, a.backend);
    set(&mut r.timeout_secs, a.timeout_secs);
    ctx.log_config("rerank");
    guard_outputs(&[&out_path], ctx.force)?;

    let mut lin = Lineage::new();
    lin.upstream(&run_path, "retrieve")?;
    lin.upstream(&corpus_path, "ingest")?;
    let runs = read_run(&run_path)?;
    let records: Vec<PairRecord> = jsonl::read(&corpus_path)?;
    let (queries, codes) = text_maps(&records);
    let r = &ctx.cfg.rerank;
    let params = RerankParams {
        window: r.window,
        stride: r.stride,
        depth: r.depth,
    };
    let backend = rerank_backend(&r.backend, ctx.cfg.embed.dim, r.timeout_secs)?;
    let outcomes = sliding_rerank_batch(&runs, &queries, &codes, &params, backend.as_ref())?;
    let failures: usize = outcomes.iter().map(|o| o.failures).sum();
    let windows: usize = outcomes.iter().map(|o| o.windows).sum();
    let lists: Vec<_> = outcomes.into_iter().map(|o| o.list).collect();
    write_run(&out_path, &lists, "rerank")?;
    lin.record("rerank", ctx.cfg.seed, json!({"rerank": r}), &[&out_path])?;
    if failures > 0 {
        log::warn!("{failures} of {windows} windows kept their input order after backend failures");
    }
    println!("reranked {} queries over {windows} windows", lists.len());
    Ok(())
}

fn cmd_listwise(ctx: &mut Ctx, a: ListwiseArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let curated_path = ctx.paths.pick(&a.curated, &p.curated, "curated.jsonl");
    let pools_path = ctx.paths.pick(&a.pools, &p.pools, "pools.jsonl");
    let corpus_path = ctx.paths.pick(&a.corpus, &p.corpus, "corpus.jsonl");
    let out_path = ctx.paths.pick(&a.instances, &p.instances, "listwise.jsonl");
    let l = &mut ctx.cfg.listwise;
    set(&mut l.instances_per_tuple, a.instances_per_tuple);
    set(&mut l.min_size, a.min_size);
    set(&mut l.max_size, a.max_size);
    set(&mut l.min_s_pos, a.min_s_pos);
    set(&mut l.pool_top, a.pool_top);
    set(&mut l.teacher, a.teacher);
    ctx.log_config("gen-listwise");
    guard_outputs(&[&out_path], ctx.force)?;

    let mut lin = Lineage::new();
    lin.upstream(&curated_path, "filter")?;
    lin.upstream(&pools_path, "mine")?;
    lin.upstream(&corpus_path, "ingest")?;
    let curated: Vec<CuratedPair> = jsonl::read(&curated_path)?;
    let pools: Vec<NegativePool> = jsonl::read(&pools_path)?;
    let records: Vec<PairRecord> = jsonl::read(&corpus_path)?;
    let (queries, codes) = text_maps(&records);
    let l = &ctx.cfg.listwise;
    let params = ListwiseParams {
        instances_per_tuple: l.instances_per_tuple,
        min_size: l.min_size,
        max_size: l.max_size,
        min_s_pos: l.min_s_pos,
        pool_top: l.pool_top,
        seed: ctx.cfg.seed,
    };
    let teacher = rerank_backend(&l.teacher, ctx.cfg.embed.dim, ctx.cfg.rerank.timeout_secs)?;
    let out = gen_listwise_data(
        &curated,
        &pools,
        &queries,
        &codes,
        teacher.as_ref(),
        &params,
    )?;
    jsonl::write(&out_path, &out.instances)?;
    lin.record(
        "gen-listwise",
        ctx.cfg.seed,
        json!({"listwise": l}),
        &[&out_path],
    )?;
    println!(
        "{} instances from {} tuples ({} too small, {} teacher failures)",
        out.instances.len(),
        out.selected_tuples,
        out.too_small,
        out.teacher_failures
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
struct IssueRecord {
    instance_id: String,
    issue: String,
}

fn cmd_localize(ctx: &mut Ctx, a: LocalizeArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let snapshot_path = ctx.paths.pick(&a.snapshot, &p.snapshot, "snapshot.jsonl");
    let gold_default = ctx.paths.pick(&None, &p.gold, "gold.jsonl");
    let issues_path = a
        .issues
        .clone()
        .or_else(|| p.issues.clone())
        .unwrap_or(gold_default);
    let out_path = ctx
        .paths
        .pick(&a.predictions, &p.predictions, "predictions.jsonl");
    set(&mut ctx.cfg.localize.depth, a.depth);
    set(&mut ctx.cfg.localize.backend, a.backend);
    set(&mut ctx.cfg.embed.provider, a.provider);
    set(&mut ctx.cfg.embed.dim, a.dim);
    ctx.log_config("localize");
    guard_outputs(&[&out_path], ctx.force)?;

    let mut lin = Lineage::new();
    lin.raw(&snapshot_path, true)?;
    lin.raw(&issues_path, false)?;
    let snapshot: Vec<FunctionRecord> = jsonl::read(&snapshot_path)?;
    let issues: Vec<IssueRecord> = jsonl::read(&issues_path)?;
    let e = &ctx.cfg.embed;
    let provider = embedding_provider(&e.provider, e.dim, e.timeout_secs)?;
    let index = SnapshotIndex::build(&snapshot, provider.as_ref())?;
    let lc = &ctx.cfg.localize;
    let params = RerankParams {
        window: ctx.cfg.rerank.window,
        stride: ctx.cfg.rerank.stride,
        depth: lc.depth,
    };
    let backend = match lc.backend.as_str() {
        "none" => None,
        spec => Some(rerank_backend(spec, e.dim, ctx.cfg.rerank.timeout_secs)?),
    };
    let predictions = issues
        .par_iter()
        .map(|issue| {
            let rerank = backend.as_deref().map(|b| (&params, b));
            let ranked = localize(
                &issue.instance_id,
                &issue.issue,
                &index,
                provider.as_ref(),
                lc.depth,
                rerank,
            )?;
            Ok(Prediction {
                instance_id: issue.instance_id.clone(),
                files: file_rollup(&ranked, index.files())?,
                functions: ranked.ids().map(str::to_string).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    jsonl::write(&out_path, &predictions)?;
    lin.record(
        "localize",
        ctx.cfg.seed,
        json!({"localize": lc, "embed": e, "window": params.window, "stride": params.stride}),
        &[&out_path],
    )?;
    println!(
        "localized {} issues over {} functions",
        predictions.len(),
        index.len()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct RetrievalReport {
    queries: usize,
    metrics: Vec<crate::ranker::MetricReport>,
}

fn cmd_eval(ctx: &mut Ctx, a: EvalArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let report_path = ctx.paths.pick(&a.report, &p.report, "report.json");
    set(&mut ctx.cfg.eval.metrics, a.metrics.clone());
    set(&mut ctx.cfg.localize.mode, a.mode.clone());
    ctx.log_config("eval");
    guard_outputs(&[&report_path], ctx.force)?;
    let mut lin = Lineage::new();

    if a.localization {
        let snapshot_path = ctx.paths.pick(&a.snapshot, &p.snapshot, "snapshot.jsonl");
        let gold_path = ctx.paths.pick(&a.gold, &p.gold, "gold.jsonl");
        let pred_path = ctx
            .paths
            .pick(&a.predictions, &p.predictions, "predictions.jsonl");
        let mode = match ctx.cfg.localize.mode.as_str() {
            "any" => HitMode::Any,
            "complete" => HitMode::Complete,
            other => {
                return Err(Error::Usage(format!(
                    "unknown hit mode `{other}` (expected any or complete)"
                )))
            }
        };
        lin.raw(&snapshot_path, true)?;
        lin.raw(&gold_path, false)?;
        lin.upstream(&pred_path, "localize")?;
        let snapshot: Vec<FunctionRecord> = jsonl::read(&snapshot_path)?;
        let gold: Vec<GoldLabels> = jsonl::read(&gold_path)?;
        let gold = gold
            .iter()
            .map(|g| g.resolve(&snapshot))
            .collect::<Result<Vec<_>>>()?;
        let preds: Vec<Prediction> = jsonl::read(&pred_path)?;
        let report = eval_localization(&preds, &gold, &LocalizationKs::default(), mode)?;
        jsonl::write_json(&report_path, &report)?;
        lin.record(
            "eval",
            ctx.cfg.seed,
            json!({"mode": ctx.cfg.localize.mode}),
            &[&report_path],
        )?;
        print!("{}", report.render_table());
        return Ok(());
    }

    let run_path = ctx.paths.pick(&a.run, &p.run, "run.trec");
    let qrels_path = ctx.paths.pick(&a.qrels, &p.qrels, "qrels.txt");
    let specs = ctx
        .cfg
        .eval
        .metrics
        .iter()
        .map(|m| m.parse::<MetricSpec>())
        .collect::<Result<Vec<_>>>()?;
    let producer = lineage::sidecar_path(&run_path)
        .is_file()
        .then(|| jsonl::read_json::<lineage::ArtifactMeta>(&lineage::sidecar_path(&run_path)))
        .transpose()?
        .map(|m| m.stage)
        .unwrap_or_else(|| "retrieve".into());
    let stage = if producer == "rerank" {
        "rerank"
    } else {
        "retrieve"
    };
    lin.upstream(&run_path, stage)?;
    if lineage::sidecar_path(&qrels_path).is_file() {
        lin.upstream(&qrels_path, "retrieve")?;
    } else {
        log::warn!(
            "{} has no lineage record; treating it as external",
            qrels_path.display()
        );
        lin.raw(&qrels_path, false)?;
    }
    let runs = read_run(&run_path)?;
    let qrels = read_qrels(&qrels_path)?;
    let metrics = specs
        .iter()
        .map(|s| compute_metrics(&runs, &qrels, *s))
        .collect::<Result<Vec<_>>>()?;
    let report = RetrievalReport {
        queries: runs.len(),
        metrics,
    };
    jsonl::write_json(&report_path, &report)?;
    lin.record(
        "eval",
        ctx.cfg.seed,
        json!({"metrics": ctx.cfg.eval.metrics}),
        &[&report_path],
    )?;
    for m in &report.metrics {
        println!("{:<12} {:.4}", m.metric, m.mean);
    }
    Ok(())
}

fn cmd_audit(ctx: &mut Ctx, a: AuditArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let out_path = ctx.paths.pick(&a.audit, &p.audit, "audit.json");
    let au = &mut ctx.cfg.audit;
    set(&mut au.sample_size, a.sample_size);
    set(&mut au.seeds, a.seeds);
    set(&mut au.judge, a.judge);
    set(&mut au.stub_threshold, a.stub_threshold);
    ctx.log_config("audit");
    guard_outputs(&[&out_path], ctx.force)?;

    let datasets: Vec<(String, PathBuf)> = if a.datasets.is_empty() {
        vec![(
            "corpus".into(),
            ctx.paths.pick(&None, &p.corpus, "corpus.jsonl"),
        )]
    } else {
        a.datasets
            .iter()
            .map(|d| {
                d.split_once('=')
                    .map(|(n, path)| (n.to_string(), PathBuf::from(path)))
                    .ok_or_else(|| Error::Usage(format!("dataset `{d}` must look like NAME=PATH")))
            })
            .collect::<Result<_>>()?
    };
    let mut lin = Lineage::new();
    let mut items = Vec::new();
    for (name, path) in &datasets {
        lin.raw(path, false)?;
        let records: Vec<PairRecord> = jsonl::read(path)?;
        items.extend(records.into_iter().map(|r| AuditItem {
            corpus: name.clone(),
            language: r.language,
            query: r.text,
            code: r.code,
        }));
    }
    let au = &ctx.cfg.audit;
    let judge = judge_backend(
        &au.judge,
        ctx.cfg.embed.dim,
        au.stub_threshold,
        ctx.cfg.rerank.timeout_secs,
    )?;
    let cfg = AuditConfig {
        sample_size: au.sample_size,
        seeds: au.seeds,
        base_seed: ctx.cfg.seed,
    };
    let report = audit_pairs(&items, judge.as_ref(), &cfg)?;
    jsonl::write_json(&out_path, &report)?;
    lin.record("audit", ctx.cfg.seed, json!({"audit": au}), &[&out_path])?;
    if report.is_partial() {
        log::warn!(
            "{} judge calls failed; the report is partial",
            report.failures
        );
    }
    print!("{}", report.render_table());
    Ok(())
}

fn cmd_synth(ctx: &mut Ctx, a: SynthArgs) -> Result<()> {
    let p = &ctx.cfg.paths;
    let pairs = ctx.paths.pick(&a.pairs, &p.pairs, "pairs.jsonl");
    let held = ctx.paths.pick(&a.held_out, &p.held_out, "held_out.jsonl");
    let snapshot = ctx.paths.pick(&a.snapshot, &p.snapshot, "snapshot.jsonl");
    let gold = ctx.paths.pick(&a.gold, &p.gold, "gold.jsonl");
    let mut outputs = vec![pairs.as_path(), held.as_path()];
    if a.issues.is_some() {
        outputs.extend([snapshot.as_path(), gold.as_path()]);
    }
    guard_outputs(&outputs, ctx.force)?;
    let corpus = topic_corpus(&SynthConfig {
        topics: a.topics,
        pairs_per_topic: a.pairs_per_topic,
        noise_rate: a.noise_rate,
        held_out_per_topic: a.held_out_per_topic,
        seed: ctx.cfg.seed,
    })?;
    let split = |want: bool| {
        corpus
            .records
            .iter()
            .zip(&corpus.held_out)
            .filter(move |(_, h)| **h == want)
            .map(|(r, _)| r)
    };
    jsonl::write(&pairs, split(false))?;
    jsonl::write(&held, split(true))?;
    if let Some(n) = a.issues {
        let fx = snapshot_fixture(a.topics.min(40), 5, n, ctx.cfg.seed)?;
        jsonl::write(&snapshot, &fx.functions)?;
        jsonl::write(&gold, &fx.gold)?;
    }
    Ok(())
}
