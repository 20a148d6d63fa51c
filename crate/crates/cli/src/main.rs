//! `nrec`: corpus building, training and retrieval from the command line.
//!
//! Exit status: 0 on success, 1 for bad input (flags, config, data that fails
//! validation), 2 for runtime failures (I/O, network, training).

mod corpus_cmds;
mod engine_cmds;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nrec_core::config::Config;
use nrec_core::Execution;

use crate::output::is_validation;

#[derive(Parser)]
#[command(name = "nrec", version, about = "Retrieve news evidence for images: build the corpus, train, rank, evaluate")]
struct Cli {
    /// Run configuration (TOML). Relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    /// Single-threaded execution (results are identical either way).
    #[arg(long, global = true)]
    sequential: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch articles into the corpus file.
    #[command(subcommand)]
    Ingest(IngestSource),
    /// Classify headlines as showing a visual event or not (sets `keep`).
    Filter(LlmArgs),
    /// Generate news captions for kept articles.
    Caption(LlmArgs),
    /// Write a corpus variant: a date cutoff plus excluded article ids.
    Variant(corpus_cmds::VariantArgs),
    /// Compute location and event relevance labels for the images.
    Label,
    /// Write embedding manifests for the external embedder.
    Index(engine_cmds::IndexArgs),
    /// Embed a manifest offline, with seeded fake vectors or a synthetic world's encoder.
    Embed(engine_cmds::EmbedArgs),
    /// Train the bi-encoder projection heads.
    TrainBiencoder,
    /// Train the location cross-scorer.
    TrainXencLoc,
    /// Train the event cross-scorer.
    TrainXencEvt,
    /// Rank articles for query images.
    Retrieve(engine_cmds::RetrieveArgs),
    /// Score a results file against the gold image records.
    Evaluate(engine_cmds::EvaluateArgs),
    /// Render the evidence prompt for one image of a results file.
    RenderPrompt(engine_cmds::PromptArgs),
    /// Show candidate event clusters, or write their template manifest.
    DumpClusters(engine_cmds::ClusterArgs),
    /// Write a synthetic world (corpus, images, embeddings, config) for trials.
    Synth(engine_cmds::SynthArgs),
}

#[derive(Subcommand)]
enum IngestSource {
    /// Monthly archive, e.g. `--from 2010-01 --to 2023-12`.
    Nyt {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Keyword/date searches, one JSON query per line: {"date": "2020-01-15", "keywords": [...]}.
    Guardian {
        #[arg(long)]
        queries: PathBuf,
        #[command(flatten)]
        net: NetArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureModeArg {
    Replay,
    Record,
    Cache,
}

#[derive(Args)]
struct NetArgs {
    /// Directory of recorded responses.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "replay")]
    fixture_mode: FixtureModeArg,
    /// Corpus file to merge into (default: config corpus_path).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
}

#[derive(Args)]
struct LlmArgs {
    #[arg(long, default_value = "http://localhost:8000/v1")]
    llm_base_url: String,
    #[arg(long, default_value = "local-instruct")]
    llm_model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = nrec_corpus::llm::LLM_KEY_ENV)]
    llm_key_env: String,
    #[arg(long, default_value_t = 0.0)]
    llm_temperature: f64,
    #[arg(long, default_value_t = 60)]
    llm_timeout_secs: u64,
    /// Replay recorded responses from this directory; no network.
    #[arg(long)]
    llm_fixtures: Option<PathBuf>,
    /// Concurrent requests.
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Redo articles that already have a verdict (filter) or captions (caption).
    #[arg(long)]
    redo: bool,
}

pub struct Ctx {
    pub cfg: Config,
    pub seed_override: Option<u64>,
    pub json: bool,
    pub exec: Execution,
}

fn context(cli: &Cli) -> Result<Ctx> {
    let mut cfg = match &cli.config {
        Some(p) if !p.exists() => return Err(output::invalid(format!("config file {} not found", p.display()))),
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(Ctx {
        cfg,
        seed_override: cli.seed,
        json: cli.json,
        exec: if cli.sequential { Execution::Sequential } else { Execution::Parallel },
    })
}

fn run(cli: Cli) -> Result<()> {
    let ctx = context(&cli)?;
    match cli.command {
        Command::Ingest(IngestSource::Nyt { from, to, net }) => corpus_cmds::ingest_nyt(&ctx, &from, &to, &net),
        Command::Ingest(IngestSource::Guardian { queries, net }) => corpus_cmds::ingest_guardian(&ctx, &queries, &net),
        Command::Filter(llm) => corpus_cmds::filter(&ctx, &llm),
        Command::Caption(llm) => corpus_cmds::caption(&ctx, &llm),
        Command::Variant(a) => corpus_cmds::variant(&ctx, &a),
        Command::Label => engine_cmds::label(&ctx),
        Command::Index(a) => engine_cmds::index(&ctx, &a),
        Command::Embed(a) => engine_cmds::embed(&ctx, &a),
        Command::TrainBiencoder => engine_cmds::train_biencoder(&ctx),
        Command::TrainXencLoc => engine_cmds::train_xenc(&ctx, engine_cmds::Stage::Location),
        Command::TrainXencEvt => engine_cmds::train_xenc(&ctx, engine_cmds::Stage::Event),
        Command::Retrieve(a) => engine_cmds::retrieve(&ctx, &a),
        Command::Evaluate(a) => engine_cmds::evaluate(&ctx, &a),
        Command::RenderPrompt(a) => engine_cmds::render_prompt(&ctx, &a),
        Command::DumpClusters(a) => engine_cmds::dump_clusters(&ctx, &a),
        Command::Synth(a) => engine_cmds::synth(&ctx, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", output::describe(&e));
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
