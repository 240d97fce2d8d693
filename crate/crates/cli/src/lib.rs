//! Pipeline orchestration behind the `nextverse` command.

pub mod config;
pub mod manifest;
pub mod stages;

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nextverse::synth::{generate_corpus, sentiment_tsv, CorpusSpec};
use nextverse_service::{serve, AppState};

use crate::config::PipelineConfig;
use crate::manifest::{write_atomic, Staleness};
use crate::stages::{ModelTag, Pipeline};

/// Exit status when a stage's inputs are missing or out of date.
pub const EXIT_STALE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "nextverse",
    version,
    about = "Train, evaluate and serve next-verse suggestion models"
)]
pub struct Cli {
    /// Pipeline configuration file.
    #[arg(
        long,
        global = true,
        default_value = "nextverse.toml",
        env = "NEXTVERSE_CONFIG"
    )]
    pub config: PathBuf,
    /// Seeds every randomized stage (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `paths.out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print command results only, without per-stage summaries.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Read the poem corpus and the group lexicon.
    Ingest,
    /// Train the verse sentiment classifier.
    TrainSentiment,
    /// Score attribute markers on the sentiment-labeled corpus.
    BuildSalience,
    /// Rewrite one verse (or every negative corpus verse) as positive.
    StyleTransfer {
        #[arg(long)]
        input: Option<String>,
    },
    /// Write the baseline and augmented training sets.
    Augment,
    /// Train the subword vocabulary.
    TrainTokenizer,
    /// Train a dual encoder on one training set.
    TrainRetriever {
        #[arg(value_enum)]
        model: ModelTag,
        /// Overrides `training.steps`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Embed the candidate pool with a trained model.
    BuildIndex {
        #[arg(value_enum)]
        model: ModelTag,
    },
    /// Print ranked next-verse suggestions.
    Suggest {
        #[arg(long)]
        input: String,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long, value_enum, default_value_t = ModelTag::Augmented)]
        model: ModelTag,
    },
    /// Score suggestions for group prompts with the sentiment classifier.
    EvalBias {
        #[arg(value_enum)]
        model: ModelTag,
        /// Overrides `eval.k`.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Compare the baseline and augmented bias reports.
    Compare,
    /// Serve the HTTP API over the built indexes.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Run every stage for both models.
    RunAll,
    /// Write a small synthetic corpus, sentiment dataset and config.
    GenerateSample {
        #[arg(long)]
        dir: PathBuf,
        /// Verses in the generated corpus.
        #[arg(long, default_value_t = 1000)]
        verses: usize,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
    }
    Ok(cfg)
}

/// Runs one parsed command to completion.
pub fn run(cli: Cli) -> Result<()> {
    if let Command::GenerateSample { dir, verses } = &cli.command {
        return generate_sample(dir, *verses, cli.seed.unwrap_or(7));
    }
    let mut p = Pipeline::open(load_config(&cli)?)?;
    p.quiet = cli.quiet;
    match cli.command {
        Command::Ingest => p.ingest(),
        Command::TrainSentiment => p.train_sentiment(),
        Command::BuildSalience => p.build_salience(),
        Command::StyleTransfer { input } => p.style_transfer(input.as_deref()),
        Command::Augment => p.augment(),
        Command::TrainTokenizer => p.train_tokenizer(),
        Command::TrainRetriever { model, steps } => {
            if let Some(steps) = steps {
                p.cfg.training.steps = steps;
            }
            p.train_retriever(model)
        }
        Command::BuildIndex { model } => p.build_index(model),
        Command::Suggest {
            input,
            n,
            offset,
            model,
        } => p.suggest(model, &input, n, offset),
        Command::EvalBias { model, k } => p.eval_bias(model, k),
        Command::Compare => p.compare(),
        Command::Serve { host, port } => run_server(&p, host, port),
        Command::RunAll => p.run_all(),
        Command::GenerateSample { .. } => unreachable!(),
    }
}

fn run_server(p: &Pipeline, host: Option<String>, port: Option<u16>) -> Result<()> {
    let opts = &p.cfg.service;
    let mut models = BTreeMap::new();
    for tag in ModelTag::ALL {
        if p.has_stage(&stages::build_index_stage(tag)) {
            models.insert(tag.to_string(), p.suggester(tag)?);
        }
    }
    if models.is_empty() {
        return Err(Staleness::Missing {
            stage: stages::build_index_stage(ModelTag::Augmented),
        }
        .into());
    }
    let sessions = opts
        .sessions_dir
        .clone()
        .unwrap_or_else(|| p.out().join("sessions"));
    let state = AppState::new(models, p.loaded_sentiment()?, &sessions, opts.page_cap)?;
    let host = host.unwrap_or_else(|| opts.host.clone());
    let addr: SocketAddr = format!("{host}:{}", port.unwrap_or(opts.port))
        .parse()
        .with_context(|| format!("invalid listen address {host}"))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(state, addr))?;
    Ok(())
}

const SAMPLE_CONFIG: &str = r#"# Small synthetic setup; every stage finishes in well under a minute.
[paths]
corpus = "poems.jsonl"
sentiment_dataset = "sentiment"
out = "out"

# The small corpus needs a lower marker threshold than the default.
[transfer]
gamma = 3.0

[tokenizer]
vocab_size = 800

[encoder]
max_len = 24
model_dim = 32
layers = 2
heads = 2
transformer_hidden = 32
head_hidden = 32
embed_dim = 32

[training]
steps = 600
batch_size = 32

[eval]
k = 50
"#;

fn generate_sample(dir: &Path, verses: usize, seed: u64) -> Result<()> {
    // Enough poems that truncation always has material to cut from.
    let spec = CorpusSpec {
        poems: verses.div_ceil(4) + 1,
        seed,
        ..CorpusSpec::default()
    };
    let mut corpus = generate_corpus(&spec);
    corpus.truncate_verses(verses);
    let (train, dev, test) = sentiment_tsv(600, 100, 100, seed.wrapping_add(1));
    fs::create_dir_all(dir.join("sentiment"))?;
    write_atomic(&dir.join("poems.jsonl"), corpus.to_jsonl().as_bytes())?;
    write_atomic(&dir.join("sentiment/train.tsv"), train.as_bytes())?;
    write_atomic(&dir.join("sentiment/dev.tsv"), dev.as_bytes())?;
    write_atomic(&dir.join("sentiment/test.tsv"), test.as_bytes())?;
    write_atomic(&dir.join("config.toml"), SAMPLE_CONFIG.as_bytes())?;
    println!(
        "wrote {} poems ({} verses) to {}",
        corpus.poems.len(),
        corpus.verse_count(),
        dir.display()
    );
    Ok(())
}

/// Process exit status for an error: stale or missing stages get their own code.
pub fn exit_status(err: &anyhow::Error) -> u8 {
    if err.chain().any(|c| c.downcast_ref::<Staleness>().is_some()) {
        EXIT_STALE
    } else {
        1
    }
}
