use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufReader, Cursor};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use log::info;
use nextverse::augment::{
    augment_corpus, read_examples_jsonl, write_examples_jsonl, AugmentDeps, TrainingExample,
};
use nextverse::bias_eval::{build_prompts, compare, evaluate_model, BiasReport};
use nextverse::corpus::{
    build_candidate_pool, read_jsonl_poems, read_raw_poems, split_into_pairs, MentionLexicon, Poem,
    PronounMap, Verse, VersePair,
};
use nextverse::retriever::{
    encode_examples, train, DualEncoder, EncoderConfig, Suggester, VerseIndex,
};
use nextverse::sentiment::{
    dataset_stats, load_dataset_dir, train_sentiment, LabelMapping, LabeledVerse, SentimentLabel,
    SentimentModel, Split,
};
use nextverse::styletransfer::{SalienceTable, StyleTransfer};
use nextverse::text;
use nextverse::tokenizer::{train_subword, SubwordVocab};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{CorpusFormat, PipelineConfig};
use crate::manifest::{sha256_hex, write_atomic, DirLock, Manifest, StageRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelTag {
    Baseline,
    Augmented,
}

impl ModelTag {
    pub const ALL: [ModelTag; 2] = [ModelTag::Baseline, ModelTag::Augmented];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Baseline => "baseline",
            ModelTag::Augmented => "augmented",
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const INGEST: &str = "ingest";
pub const TRAIN_SENTIMENT: &str = "train-sentiment";
pub const BUILD_SALIENCE: &str = "build-salience";
pub const STYLE_TRANSFER: &str = "style-transfer";
pub const AUGMENT: &str = "augment";
pub const TRAIN_TOKENIZER: &str = "train-tokenizer";
pub const COMPARE: &str = "compare";

pub fn train_retriever_stage(tag: ModelTag) -> String {
    format!("train-retriever:{tag}")
}

pub fn build_index_stage(tag: ModelTag) -> String {
    format!("build-index:{tag}")
}

pub fn eval_bias_stage(tag: ModelTag) -> String {
    format!("eval-bias:{tag}")
}

/// Stage outputs gathered before being written and recorded.
#[derive(Default)]
struct Outputs(Vec<(String, Vec<u8>)>);

impl Outputs {
    fn add(&mut self, path: &str, bytes: impl Into<Vec<u8>>) {
        self.0.push((path.to_string(), bytes.into()));
    }

    fn json<T: Serialize>(&mut self, path: &str, value: &T) -> Result<()> {
        let mut raw = serde_json::to_string_pretty(value)?;
        raw.push('\n');
        self.add(path, raw);
        Ok(())
    }
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    /// Suppresses per-stage summaries (command results still print).
    pub quiet: bool,
    out: PathBuf,
    manifest: Manifest,
}

impl Pipeline {
    pub fn open(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.paths.out.clone();
        let manifest = Manifest::load(&out)?;
        Ok(Pipeline {
            cfg,
            quiet: false,
            out,
            manifest,
        })
    }

    fn say(&self, line: String) {
        if !self.quiet {
            println!("{line}");
        }
    }

    fn say_block(&self, block: &str) {
        if !self.quiet {
            print!("{block}");
        }
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    fn require(&self, stages: &[&str]) -> Result<()> {
        for stage in stages {
            self.manifest.check_fresh(&self.out, stage)?;
        }
        Ok(())
    }

    fn read(&self, rel: &str) -> Result<String> {
        let path = self.out.join(rel);
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))
    }

    fn finish<P: Serialize>(
        &mut self,
        stage: &str,
        deps: &[&str],
        external: BTreeMap<String, String>,
        params: &P,
        outputs: Outputs,
    ) -> Result<()> {
        let _lock = DirLock::acquire(&self.out)?;
        let mut record = StageRecord {
            inputs: external,
            params: sha256_hex(serde_json::to_string(params)?.as_bytes()),
            outputs: BTreeMap::new(),
        };
        for dep in deps {
            record
                .inputs
                .insert(dep.to_string(), self.manifest.stages[*dep].digest());
        }
        for (rel, bytes) in outputs.0 {
            write_atomic(&self.out.join(&rel), &bytes)?;
            record.outputs.insert(rel, sha256_hex(&bytes));
        }
        // Re-read in case another process finished a stage meanwhile.
        self.manifest = Manifest::load(&self.out)?;
        self.manifest.stages.insert(stage.to_string(), record);
        self.manifest.save(&self.out)?;
        info!("stage {stage} done");
        Ok(())
    }

    // ---- loaders for recorded artifacts ----

    fn poems(&self) -> Result<Vec<Poem>> {
        self.read("corpus/poems.jsonl")?
            .lines()
            .map(|l| serde_json::from_str(l).context("parsing corpus/poems.jsonl"))
            .collect()
    }

    fn verses(&self) -> Result<Vec<Verse>> {
        Ok(self.poems()?.into_iter().flat_map(|p| p.verses).collect())
    }

    fn lexicon(&self) -> Result<MentionLexicon> {
        Ok(MentionLexicon::from_text(
            &self.read("corpus/lexicon.txt")?,
        )?)
    }

    fn sentiment_model(&self) -> Result<SentimentModel> {
        Ok(SentimentModel::from_json(
            &self.read("sentiment/model.json")?,
        )?)
    }

    fn transfer_model(&self) -> Result<StyleTransfer> {
        let table = SalienceTable::from_tsv(
            &self.read("transfer/salience.tsv")?,
            self.cfg.transfer.lambda,
        )?;
        let corpus: StyleCorpus = serde_json::from_str(&self.read("transfer/style_corpus.json")?)?;
        let positive: Vec<Vec<String>> = corpus
            .positive
            .iter()
            .map(|t| text::word_tokens(t))
            .collect();
        Ok(StyleTransfer::from_table(
            table,
            &positive,
            self.cfg.transfer.clone(),
        ))
    }

    fn vocab(&self) -> Result<SubwordVocab> {
        Ok(SubwordVocab::from_text(&self.read("tokenizer/vocab.txt")?)?)
    }

    fn model(&self, tag: ModelTag) -> Result<DualEncoder> {
        let path = self.out.join(format!("retriever/{tag}/checkpoint.bin"));
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(DualEncoder::from_bytes(&bytes)?)
    }

    pub fn suggester(&self, tag: ModelTag) -> Result<Suggester> {
        self.require(&[&build_index_stage(tag)])?;
        let index = VerseIndex::from_json(&self.read(&format!("index/{tag}.json"))?)?;
        Ok(Suggester::new(self.model(tag)?, self.vocab()?, index)?)
    }

    pub fn loaded_sentiment(&self) -> Result<SentimentModel> {
        self.require(&[TRAIN_SENTIMENT])?;
        self.sentiment_model()
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.manifest.check_fresh(&self.out, stage).is_ok()
    }

    // ---- stages ----

    pub fn ingest(&mut self) -> Result<()> {
        let path = &self.cfg.paths.corpus;
        let raw = fs::read(path).with_context(|| format!("reading corpus {}", path.display()))?;
        let (poems, warnings) = match self.cfg.corpus.format {
            CorpusFormat::Jsonl => read_jsonl_poems(BufReader::new(Cursor::new(&raw)))?,
            CorpusFormat::Raw => {
                let text = String::from_utf8(raw.clone()).context("corpus is not utf-8")?;
                read_raw_poems(&text, "poem")
            }
        };
        let mut external = BTreeMap::from([("file:corpus".to_string(), sha256_hex(&raw))]);
        let lexicon = match &self.cfg.paths.lexicon {
            Some(p) => {
                let raw = fs::read_to_string(p)
                    .with_context(|| format!("reading lexicon {}", p.display()))?;
                external.insert("file:lexicon".into(), sha256_hex(raw.as_bytes()));
                MentionLexicon::from_text(&raw)?
            }
            None => MentionLexicon::default(),
        };
        let verses: usize = poems.iter().map(|p| p.verses.len()).sum();
        let pairs: usize = poems.iter().map(|p| p.verses.len().saturating_sub(1)).sum();
        if pairs == 0 {
            bail!("corpus {} has no consecutive verse pairs", path.display());
        }
        let mut body = String::new();
        for p in &poems {
            body.push_str(&serde_json::to_string(p)?);
            body.push('\n');
        }
        let mut out = Outputs::default();
        out.add("corpus/poems.jsonl", body);
        out.add("corpus/lexicon.txt", lexicon.to_text());
        out.json(
            "corpus/ingest.json",
            &json!({ "poems": poems.len(), "verses": verses, "pairs": pairs, "skipped": warnings }),
        )?;
        self.say(format!(
            "ingested {} poems, {verses} verses, {pairs} pairs ({} lines skipped)",
            poems.len(),
            warnings.total()
        ));
        self.finish(INGEST, &[], external, &self.cfg.corpus.clone(), out)
    }

    pub fn train_sentiment(&mut self) -> Result<()> {
        let dir = self.cfg.paths.sentiment_dataset.clone();
        let (rows, dropped) =
            load_dataset_dir(&dir, &LabelMapping::default(), self.cfg.sentiment.seed)?;
        let part = |s: Split| -> Vec<LabeledVerse> {
            rows.iter()
                .filter(|r| r.split == Some(s))
                .cloned()
                .collect()
        };
        let (train_rows, dev_rows, test_rows) =
            (part(Split::Train), part(Split::Dev), part(Split::Test));
        let (model, summary) = train_sentiment(&train_rows, &dev_rows, &self.cfg.sentiment)?;
        let stats = dataset_stats(&rows);
        let test_accuracy = (!test_rows.is_empty()).then(|| model.accuracy(&test_rows));
        let majority = test_rows
            .iter()
            .filter(|r| r.label == SentimentLabel::NoImpact)
            .count() as f64
            / test_rows.len().max(1) as f64;
        self.say_block(&stats.render());
        self.say(format!(
            "dev accuracy {:.4}, test accuracy {}, no-impact baseline {majority:.4}",
            summary.dev_accuracy,
            test_accuracy.map_or("n/a".to_string(), |a| format!("{a:.4}"))
        ));
        let mut external = BTreeMap::new();
        for name in ["train.tsv", "dev.tsv", "test.tsv", "data.tsv"] {
            if let Ok(bytes) = fs::read(dir.join(name)) {
                external.insert(format!("file:sentiment/{name}"), sha256_hex(&bytes));
            }
        }
        let mut out = Outputs::default();
        out.add("sentiment/model.json", model.to_json()?);
        out.json(
            "sentiment/report.json",
            &json!({
                "dataset": stats,
                "dropped": dropped,
                "best_epoch": summary.best_epoch,
                "train_accuracy": summary.train_accuracy,
                "dev_accuracy": summary.dev_accuracy,
                "test_accuracy": test_accuracy,
                "test_majority_baseline": majority,
            }),
        )?;
        self.finish(
            TRAIN_SENTIMENT,
            &[],
            external,
            &self.cfg.sentiment.clone(),
            out,
        )
    }

    pub fn build_salience(&mut self) -> Result<()> {
        self.require(&[INGEST, TRAIN_SENTIMENT])?;
        let sm = self.sentiment_model()?;
        let mut corpus = StyleCorpus::default();
        for v in self.verses()? {
            match sm.label(&v.text) {
                SentimentLabel::Negative => corpus.negative.push(v.text),
                SentimentLabel::Positive => corpus.positive.push(v.text),
                _ => {}
            }
        }
        let st = StyleTransfer::build(
            &corpus.negative,
            &corpus.positive,
            self.cfg.transfer.clone(),
        )?;
        self.say(format!(
            "{} negative and {} positive verses, {} n-grams scored, {} positive verses with markers",
            corpus.negative.len(),
            corpus.positive.len(),
            st.table.len(),
            st.positive_pool.len()
        ));
        let mut out = Outputs::default();
        out.add("transfer/salience.tsv", st.table.to_tsv());
        out.json("transfer/style_corpus.json", &corpus)?;
        self.finish(
            BUILD_SALIENCE,
            &[INGEST, TRAIN_SENTIMENT],
            BTreeMap::new(),
            &self.cfg.transfer.clone(),
            out,
        )
    }

    /// Transfers one verse, or with `None` every negative corpus verse.
    pub fn style_transfer(&mut self, input: Option<&str>) -> Result<()> {
        self.require(&[INGEST, TRAIN_SENTIMENT, BUILD_SALIENCE])?;
        let st = self.transfer_model()?;
        if let Some(text) = input {
            let outcome = st.to_positive(&Verse::detached(text))?;
            println!("{}", outcome.verse.text);
            if outcome.no_op {
                println!("(no negative attribute marker found; verse unchanged)");
            }
            return Ok(());
        }
        let sm = self.sentiment_model()?;
        let mut body = String::new();
        let (mut total, mut no_op) = (0usize, 0usize);
        for v in self.verses()? {
            if sm.label(&v.text) != SentimentLabel::Negative {
                continue;
            }
            let outcome = st.to_positive(&v)?;
            total += 1;
            no_op += usize::from(outcome.no_op);
            body.push_str(&serde_json::to_string(&json!({
                "original": v.text,
                "transferred": outcome.verse.text,
                "no_op": outcome.no_op,
            }))?);
            body.push('\n');
        }
        self.say(format!(
            "transferred {} of {total} negative verses ({no_op} without markers)",
            total - no_op
        ));
        let mut out = Outputs::default();
        out.add("transfer/transferred.jsonl", body);
        out.json(
            "transfer/report.json",
            &json!({ "negative_verses": total, "no_op": no_op }),
        )?;
        self.finish(
            STYLE_TRANSFER,
            &[INGEST, TRAIN_SENTIMENT, BUILD_SALIENCE],
            BTreeMap::new(),
            &self.cfg.transfer.clone(),
            out,
        )
    }

    pub fn augment(&mut self) -> Result<()> {
        self.require(&[INGEST, TRAIN_SENTIMENT, BUILD_SALIENCE])?;
        let sm = self.sentiment_model()?;
        let st = self.transfer_model()?;
        let lex = self.lexicon()?;
        let pairs: Vec<VersePair> = self
            .poems()?
            .iter()
            .flat_map(|p| split_into_pairs(&p.verses))
            .collect();
        let deps = AugmentDeps {
            sentiment: &sm,
            transfer: &st,
            lexicon: &lex,
        };
        let (augmented, report) = augment_corpus(&pairs, &deps, &self.cfg.augment)?;
        let baseline: Vec<TrainingExample> = pairs.iter().map(TrainingExample::original).collect();
        self.say_block(&report.pair_stats.render());
        self.say(format!(
            "scenario 1: {} of {} transferred ({} without markers); scenario 2: {} of {} transferred",
            report.provenance.scenario1,
            report.scenario1_eligible,
            report.scenario1_no_op,
            report.provenance.scenario2,
            report.scenario2_eligible
        ));
        let mut out = Outputs::default();
        out.add("augment/baseline.jsonl", write_examples_jsonl(&baseline)?);
        out.add("augment/augmented.jsonl", write_examples_jsonl(&augmented)?);
        out.json("augment/report.json", &report)?;
        self.finish(
            AUGMENT,
            &[INGEST, TRAIN_SENTIMENT, BUILD_SALIENCE],
            BTreeMap::new(),
            &self.cfg.augment.clone(),
            out,
        )
    }

    fn examples(&self, tag: ModelTag) -> Result<Vec<TrainingExample>> {
        let raw = self.read(&format!("augment/{tag}.jsonl"))?;
        Ok(read_examples_jsonl(Cursor::new(raw))?)
    }

    fn candidate_pool(&self) -> Result<Vec<String>> {
        let pool = build_candidate_pool(&self.verses()?, &PronounMap::default());
        Ok(pool.into_iter().map(|v| v.text).collect())
    }

    pub fn train_tokenizer(&mut self) -> Result<()> {
        self.require(&[INGEST, AUGMENT])?;
        let mut texts = self.candidate_pool()?;
        texts.extend(
            self.examples(ModelTag::Augmented)?
                .into_iter()
                .map(|e| e.positive.text),
        );
        let vocab = train_subword(&texts, self.cfg.tokenizer.vocab_size)?;
        self.say(format!(
            "vocabulary of {} pieces ({} merges)",
            vocab.len(),
            vocab.merges().len()
        ));
        let mut out = Outputs::default();
        out.add("tokenizer/vocab.txt", vocab.to_text());
        self.finish(
            TRAIN_TOKENIZER,
            &[INGEST, AUGMENT],
            BTreeMap::new(),
            &self.cfg.tokenizer.clone(),
            out,
        )
    }

    pub fn train_retriever(&mut self, tag: ModelTag) -> Result<()> {
        self.require(&[TRAIN_TOKENIZER, AUGMENT])?;
        let vocab = self.vocab()?;
        let examples = encode_examples(&vocab, &self.examples(tag)?);
        let encoder = EncoderConfig {
            vocab_size: vocab.len(),
            ..self.cfg.encoder
        };
        let (model, report) = train(encoder, &examples, &self.cfg.training)?;
        let tail = report.losses.len().div_ceil(10);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        self.say(format!(
            "{tag}: {} steps, mean loss first 10% {:.4}, last 10% {:.4}",
            report.losses.len(),
            mean(&report.losses[..tail]),
            mean(&report.losses[report.losses.len() - tail..])
        ));
        let mut out = Outputs::default();
        out.add(&format!("retriever/{tag}/checkpoint.bin"), model.to_bytes());
        out.json(
            &format!("retriever/{tag}/training.json"),
            &json!({ "checkpoint_hash": model.hash(), "report": report }),
        )?;
        let params = json!({ "encoder": encoder, "training": self.cfg.training });
        self.finish(
            &train_retriever_stage(tag),
            &[TRAIN_TOKENIZER, AUGMENT],
            BTreeMap::new(),
            &params,
            out,
        )
    }

    pub fn build_index(&mut self, tag: ModelTag) -> Result<()> {
        let trained = train_retriever_stage(tag);
        self.require(&[INGEST, TRAIN_TOKENIZER, &trained])?;
        let index = VerseIndex::build(&self.model(tag)?, &self.vocab()?, &self.candidate_pool()?)?;
        self.say(format!("{tag}: indexed {} verses", index.len()));
        let mut out = Outputs::default();
        out.add(&format!("index/{tag}.json"), index.to_json()?);
        self.finish(
            &build_index_stage(tag),
            &[INGEST, TRAIN_TOKENIZER, &trained],
            BTreeMap::new(),
            &(),
            out,
        )
    }

    pub fn suggest(&self, tag: ModelTag, input: &str, n: usize, offset: usize) -> Result<()> {
        let s = self.suggester(tag)?;
        for item in s.suggest_page(input, offset, n)? {
            println!("{:>3}  {:>8.4}  {}", item.rank, item.score, item.verse);
        }
        Ok(())
    }

    pub fn eval_bias(&mut self, tag: ModelTag, k: Option<usize>) -> Result<()> {
        let index_stage = build_index_stage(tag);
        let trained = train_retriever_stage(tag);
        let deps = [
            INGEST,
            TRAIN_SENTIMENT,
            TRAIN_TOKENIZER,
            trained.as_str(),
            index_stage.as_str(),
        ];
        self.require(&deps)?;
        let k = k.unwrap_or(self.cfg.eval.k);
        let s = self.suggester(tag)?;
        let prompts = build_prompts(&self.lexicon()?);
        let report = evaluate_model(tag.as_str(), &s, &prompts, k, &self.sentiment_model()?)?;
        self.say_block(&report.render());
        let mut out = Outputs::default();
        out.add(&format!("bias/{tag}.json"), report.to_json()?);
        out.add(&format!("bias/{tag}.txt"), report.render());
        self.finish(
            &eval_bias_stage(tag),
            &deps,
            BTreeMap::new(),
            &json!({ "k": k }),
            out,
        )
    }

    pub fn compare(&mut self) -> Result<()> {
        let b = eval_bias_stage(ModelTag::Baseline);
        let a = eval_bias_stage(ModelTag::Augmented);
        self.require(&[&b, &a])?;
        let baseline = BiasReport::from_json(&self.read("bias/baseline.json")?)?;
        let augmented = BiasReport::from_json(&self.read("bias/augmented.json")?)?;
        let cmp = compare(&baseline, &augmented)?;
        self.say_block(&cmp.render());
        let mut out = Outputs::default();
        out.add("bias/comparison.json", cmp.to_json()?);
        out.add("bias/comparison.txt", cmp.render());
        self.finish(COMPARE, &[&b, &a], BTreeMap::new(), &(), out)
    }

    /// Every stage from ingest to compare, for both models.
    pub fn run_all(&mut self) -> Result<()> {
        self.ingest()?;
        self.train_sentiment()?;
        self.build_salience()?;
        self.style_transfer(None)?;
        self.augment()?;
        self.train_tokenizer()?;
        for tag in ModelTag::ALL {
            self.train_retriever(tag)?;
            self.build_index(tag)?;
            self.eval_bias(tag, None)?;
        }
        self.compare()
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct StyleCorpus {
    negative: Vec<String>,
    positive: Vec<String>,
}
