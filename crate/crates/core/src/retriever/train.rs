use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{batch_gradient, batch_loss, BatchRow, LossOptions, TrainBatch};
use super::{DualEncoder, EncoderConfig, Tower};
use crate::augment::TrainingExample;
use crate::error::{Error, Result};
use crate::tokenizer::SubwordVocab;

/// One training pair as token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub input: Vec<u32>,
    pub response: Vec<u32>,
    pub hard_negatives: Vec<Vec<u32>>,
}

impl EncodedExample {
    fn row(&self) -> BatchRow {
        BatchRow {
            input: self.input.clone(),
            response: self.response.clone(),
            hard_negatives: self.hard_negatives.clone(),
        }
    }
}

pub fn encode_examples(vocab: &SubwordVocab, examples: &[TrainingExample]) -> Vec<EncodedExample> {
    examples
        .iter()
        .map(|ex| EncodedExample {
            input: vocab.encode(&ex.input.text),
            response: vocab.encode(&ex.positive.text),
            hard_negatives: ex
                .hard_negatives
                .iter()
                .map(|n| vocab.encode(&n.text))
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Rate used once `decay_fraction` of the steps have run.
    pub final_learning_rate: f64,
    pub decay_fraction: f64,
    pub loss: LossOptions,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 32,
            learning_rate: 0.05,
            final_learning_rate: 0.005,
            decay_fraction: 0.7,
            loss: LossOptions::default(),
            seed: 23,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.final_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.decay_fraction) {
            return Err(Error::Config("decay_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if (step as f64) < self.decay_fraction * self.steps as f64 {
            self.learning_rate
        } else {
            self.final_learning_rate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training-mode loss of every step's batch.
    pub losses: Vec<f64>,
    pub truncated_sequences: usize,
}

/// Mini-batch SGD from a seeded initialization. Batches are drawn from a
/// seeded permutation of the examples that is redrawn each epoch; the same rng
/// stream drives attention dropout.
pub fn train(
    encoder: EncoderConfig,
    examples: &[EncodedExample],
    cfg: &TrainConfig,
) -> Result<(DualEncoder, TrainReport)> {
    cfg.validate()?;
    let need = 2 * cfg.batch_size;
    if examples.len() < need {
        return Err(Error::TooFewExamples {
            have: examples.len(),
            need,
        });
    }
    let mut model = DualEncoder::new(encoder, cfg.seed)?;
    let truncated_sequences = examples
        .iter()
        .flat_map(|e| {
            std::iter::once(&e.input)
                .chain(std::iter::once(&e.response))
                .chain(&e.hard_negatives)
        })
        .filter(|ids| ids.len() > encoder.max_len)
        .count();
    if truncated_sequences > 0 {
        info!(
            "{truncated_sequences} sequences exceed max_len {} and will be truncated",
            encoder.max_len
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cursor + cfg.batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let rows = order[cursor..cursor + cfg.batch_size]
            .iter()
            .map(|&i| examples[i].row())
            .collect();
        cursor += cfg.batch_size;
        let batch = TrainBatch::new(rows)?;
        let (loss, grad) = batch_gradient(&model, &batch, cfg.loss, Some(&mut rng));
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        let lr = cfg.learning_rate_at(step);
        for (tower, g) in [
            (Tower::Input, &grad.input),
            (Tower::Response, &grad.response),
        ] {
            for (p, d) in model.tower_mut(tower).iter_mut().zip(g) {
                *p -= lr * d;
            }
        }
        if !model.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: f64::NAN,
            });
        }
        if step % 100 == 0 {
            debug!("step {step} loss {loss:.5} lr {lr}");
        }
    }
    Ok((
        model,
        TrainReport {
            losses,
            truncated_sequences,
        },
    ))
}

/// Mean inference-mode loss over consecutive batches of `batch_size`
/// (a trailing partial batch of at least two rows is included).
pub fn evaluate_loss(
    model: &DualEncoder,
    examples: &[EncodedExample],
    batch_size: usize,
    opts: LossOptions,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in examples.chunks(batch_size.max(2)) {
        if chunk.len() < 2 {
            continue;
        }
        let batch = TrainBatch::new(chunk.iter().map(EncodedExample::row).collect())?;
        total += batch_loss(model, &batch, opts);
        count += 1;
    }
    if count == 0 {
        return Err(Error::TooFewExamples {
            have: examples.len(),
            need: 2,
        });
    }
    Ok(total / count as f64)
}
