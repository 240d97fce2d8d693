//! Turns groundtruth verse pairs into retrieval training examples, replacing
//! negative next verses with positive style-transferred versions.
//!
//! Scenario 1: the input mentions a demographic group and the next verse is
//! negative; always transferred. Scenario 2: no demographic mention, negative
//! next verse; transferred with a fixed probability. A transferred example
//! keeps the original next verse as its single hard negative.

use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{MentionLexicon, PairStats, Verse, VersePair};
use crate::error::{Error, Result};
use crate::sentiment::{SentimentLabel, SentimentModel};
use crate::styletransfer::{StyleTransfer, TransferOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Scenario1,
    Scenario2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input: Verse,
    pub positive: Verse,
    pub hard_negatives: Vec<Verse>,
    pub provenance: Provenance,
}

impl TrainingExample {
    pub fn original(pair: &VersePair) -> Self {
        TrainingExample {
            input: pair.input.clone(),
            positive: pair.next.clone(),
            hard_negatives: Vec::new(),
            provenance: Provenance::Original,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub scenario2_probability: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scenario2_probability: 0.5,
            seed: 17,
        }
    }
}

/// Anything that labels verse sentiment.
pub trait SentimentOracle {
    fn label(&self, text: &str) -> SentimentLabel;
}

impl SentimentOracle for SentimentModel {
    fn label(&self, text: &str) -> SentimentLabel {
        SentimentModel::label(self, text)
    }
}

impl<F: Fn(&str) -> SentimentLabel> SentimentOracle for F {
    fn label(&self, text: &str) -> SentimentLabel {
        self(text)
    }
}

/// Anything that produces a positive version of a verse.
pub trait PositiveTransfer {
    fn to_positive(&self, v: &Verse) -> Result<TransferOutcome>;
}

impl PositiveTransfer for StyleTransfer {
    fn to_positive(&self, v: &Verse) -> Result<TransferOutcome> {
        StyleTransfer::to_positive(self, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Demographic mention and negative next verse.
    One,
    /// No demographic mention and negative next verse.
    Two,
}

/// Which augmentation rule applies to a pair, if any.
pub fn scenario_for(has_demographic_mention: bool, next_label: SentimentLabel) -> Option<Scenario> {
    match (has_demographic_mention, next_label) {
        (true, SentimentLabel::Negative) => Some(Scenario::One),
        (false, SentimentLabel::Negative) => Some(Scenario::Two),
        _ => None,
    }
}

/// What happened to one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairOutcome {
    pub has_mention: bool,
    pub next_label: SentimentLabel,
    pub scenario: Option<Scenario>,
    /// Scenario 2 draw result; `None` when no draw was made.
    pub selected: Option<bool>,
    /// Transfer was attempted but returned the verse unchanged.
    pub no_op: bool,
}

pub struct AugmentDeps<'a, S: ?Sized, T: ?Sized> {
    pub sentiment: &'a S,
    pub transfer: &'a T,
    pub lexicon: &'a MentionLexicon,
}

/// Augments one pair. The rng is consulted only for scenario 2 pairs.
pub fn augment_pair<S, T, R>(
    pair: &VersePair,
    deps: &AugmentDeps<'_, S, T>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(TrainingExample, PairOutcome)>
where
    S: SentimentOracle + ?Sized,
    T: PositiveTransfer + ?Sized,
    R: Rng + ?Sized,
{
    let has_mention = deps.lexicon.has_demographic_mention(&pair.input.text);
    let next_label = deps.sentiment.label(&pair.next.text);
    let scenario = scenario_for(has_mention, next_label);
    let mut outcome = PairOutcome {
        has_mention,
        next_label,
        scenario,
        selected: None,
        no_op: false,
    };
    let provenance = match scenario {
        None => return Ok((TrainingExample::original(pair), outcome)),
        Some(Scenario::One) => Provenance::Scenario1,
        Some(Scenario::Two) => {
            let chosen = rng.random::<f64>() < cfg.scenario2_probability;
            outcome.selected = Some(chosen);
            if !chosen {
                return Ok((TrainingExample::original(pair), outcome));
            }
            Provenance::Scenario2
        }
    };
    let transferred = deps.transfer.to_positive(&pair.next)?;
    if transferred.no_op || transferred.verse.normalized() == pair.input.normalized() {
        outcome.no_op = true;
        return Ok((TrainingExample::original(pair), outcome));
    }
    let example = TrainingExample {
        input: pair.input.clone(),
        positive: transferred.verse,
        hard_negatives: vec![pair.next.clone()],
        provenance,
    };
    Ok((example, outcome))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceCounts {
    pub original: usize,
    pub scenario1: usize,
    pub scenario2: usize,
}

impl ProvenanceCounts {
    pub fn total(&self) -> usize {
        self.original + self.scenario1 + self.scenario2
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub pairs: usize,
    pub provenance: ProvenanceCounts,
    pub scenario1_eligible: usize,
    pub scenario1_no_op: usize,
    pub scenario2_eligible: usize,
    pub scenario2_selected: usize,
    pub scenario2_no_op: usize,
    /// Input mention x next-verse sentiment, before augmentation.
    pub pair_stats: PairStats,
}

impl AugmentationReport {
    /// Fraction of scenario-2-eligible pairs that ended up transferred.
    pub fn scenario2_transferred_fraction(&self) -> f64 {
        if self.scenario2_eligible == 0 {
            return 0.0;
        }
        self.provenance.scenario2 as f64 / self.scenario2_eligible as f64
    }

    fn record(&mut self, example: &TrainingExample, outcome: &PairOutcome) {
        self.pairs += 1;
        match example.provenance {
            Provenance::Original => self.provenance.original += 1,
            Provenance::Scenario1 => self.provenance.scenario1 += 1,
            Provenance::Scenario2 => self.provenance.scenario2 += 1,
        }
        let row = if outcome.has_mention {
            &mut self.pair_stats.with_demographic
        } else {
            &mut self.pair_stats.without_demographic
        };
        row.add(outcome.next_label);
        match outcome.scenario {
            Some(Scenario::One) => {
                self.scenario1_eligible += 1;
                self.scenario1_no_op += usize::from(outcome.no_op);
            }
            Some(Scenario::Two) => {
                self.scenario2_eligible += 1;
                if outcome.selected == Some(true) {
                    self.scenario2_selected += 1;
                    self.scenario2_no_op += usize::from(outcome.no_op);
                }
            }
            None => {}
        }
    }
}

/// Augments every pair in corpus order with one seeded rng stream.
pub fn augment_corpus<S, T>(
    pairs: &[VersePair],
    deps: &AugmentDeps<'_, S, T>,
    cfg: &AugmentConfig,
) -> Result<(Vec<TrainingExample>, AugmentationReport)>
where
    S: SentimentOracle + ?Sized,
    T: PositiveTransfer + ?Sized,
{
    if !(0.0..=1.0).contains(&cfg.scenario2_probability) {
        return Err(Error::Config(
            "scenario2_probability must be within [0, 1]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = AugmentationReport::default();
    let mut examples = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let (example, outcome) = augment_pair(pair, deps, cfg, &mut rng)?;
        report.record(&example, &outcome);
        examples.push(example);
    }
    Ok((examples, report))
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    input: String,
    positive: String,
    hard_negatives: Vec<String>,
    provenance: Provenance,
}

/// One `{input, positive, hard_negatives, provenance}` object per line.
pub fn write_examples_jsonl(examples: &[TrainingExample]) -> Result<String> {
    let mut out = String::new();
    for e in examples {
        let record = ExampleRecord {
            input: e.input.text.clone(),
            positive: e.positive.text.clone(),
            hard_negatives: e.hard_negatives.iter().map(|v| v.text.clone()).collect(),
            provenance: e.provenance,
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_examples_jsonl<R: BufRead>(reader: R) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<examples jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ExampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse("examples jsonl", i + 1, e.to_string()))?;
        out.push(TrainingExample {
            input: Verse::detached(&r.input),
            positive: Verse::detached(&r.positive),
            hard_negatives: r
                .hard_negatives
                .iter()
                .map(|t| Verse::detached(t))
                .collect(),
            provenance: r.provenance,
        });
    }
    Ok(out)
}
