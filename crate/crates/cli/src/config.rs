use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nextverse::augment::AugmentConfig;
use nextverse::retriever::{EncoderConfig, TrainConfig};
use nextverse::sentiment::SentimentConfig;
use nextverse::styletransfer::TransferConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub corpus: CorpusOptions,
    #[serde(default)]
    pub sentiment: SentimentConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub tokenizer: TokenizerOptions,
    /// `vocab_size` is taken from the trained tokenizer.
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub service: ServiceOptions,
}

/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    /// Directory with train/dev/test.tsv (or a single data.tsv).
    pub sentiment_dataset: PathBuf,
    /// Lexicon file; the built-in group list when absent.
    pub lexicon: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Jsonl,
    Raw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusOptions {
    pub format: CorpusFormat,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            format: CorpusFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerOptions {
    pub vocab_size: usize,
}

impl Default for TokenizerOptions {
    fn default() -> Self {
        TokenizerOptions { vocab_size: 4000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Suggestions scored per prompt.
    pub k: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { k: 50 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceOptions {
    pub host: String,
    pub port: u16,
    pub page_cap: usize,
    /// Session logs; `<out>/sessions` when absent.
    pub sessions_dir: Option<PathBuf>,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            host: "127.0.0.1".into(),
            port: 8080,
            page_cap: 50,
            sessions_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.corpus = base.join(&cfg.paths.corpus);
        cfg.paths.sentiment_dataset = base.join(&cfg.paths.sentiment_dataset);
        cfg.paths.lexicon = cfg.paths.lexicon.as_ref().map(|p| base.join(p));
        cfg.paths.out = base.join(&cfg.paths.out);
        if let Some(dir) = &cfg.service.sessions_dir {
            cfg.service.sessions_dir = Some(base.join(dir));
        }
        Ok(cfg)
    }

    /// One seed for every stage: the sentiment trainer, augmentation draws
    /// and retriever training each get a distinct offset.
    pub fn apply_seed(&mut self, seed: u64) {
        self.sentiment.seed = seed;
        self.augment.seed = seed.wrapping_add(1);
        self.training.seed = seed.wrapping_add(2);
    }

    pub fn validate(&self) -> Result<()> {
        self.transfer.validate()?;
        self.training.validate()?;
        let encoder = EncoderConfig {
            vocab_size: self.encoder.vocab_size.max(1),
            ..self.encoder
        };
        encoder.validate()?;
        if !(0.0..=1.0).contains(&self.augment.scenario2_probability) {
            bail!("augment.scenario2_probability must be within [0, 1]");
        }
        if self.tokenizer.vocab_size <= nextverse::tokenizer::BASE_SIZE {
            bail!(
                "tokenizer.vocab_size must exceed the byte alphabet ({})",
                nextverse::tokenizer::BASE_SIZE
            );
        }
        if self.eval.k == 0 {
            bail!("eval.k must be at least 1");
        }
        if self.sentiment.max_ngram == 0 || self.sentiment.epochs == 0 {
            bail!("sentiment.max_ngram and sentiment.epochs must be positive");
        }
        Ok(())
    }
}
