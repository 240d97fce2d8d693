#![allow(dead_code)]

use nextverse::retriever::{
    batch_gradient, batch_loss, BatchRow, DualEncoder, EncoderConfig, LossOptions, Tower,
    TrainBatch,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn grad_check_config() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 24,
        max_len: 8,
        model_dim: 16,
        layers: 2,
        heads: 2,
        transformer_hidden: 16,
        head_hidden: 16,
        embed_dim: 16,
        attention_dropout: 0.0,
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, k: usize, vocab: u32, hard: bool) -> TrainBatch {
    let seq = |rng: &mut ChaCha8Rng| {
        let len = rng.random_range(1..5);
        let mut ids = vec![2];
        ids.extend((0..len).map(|_| rng.random_range(4..vocab)));
        ids.push(3);
        ids
    };
    let rows = (0..k)
        .map(|i| BatchRow {
            input: seq(rng),
            response: seq(rng),
            hard_negatives: if hard && i % 2 == 0 {
                vec![seq(rng)]
            } else {
                vec![]
            },
        })
        .collect();
    TrainBatch::new(rows).unwrap()
}

pub struct GradCheck {
    /// (tower, index, analytic, finite difference, relative error)
    pub entries: Vec<(Tower, usize, f64, f64, f64)>,
}

impl GradCheck {
    pub fn fraction_below(&self, tol: f64) -> f64 {
        self.entries.iter().filter(|e| e.4 < tol).count() as f64 / self.entries.len() as f64
    }

    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.4).fold(0.0, f64::max)
    }
}

/// Central differences for every parameter of both towers. Parameters that
/// the batch cannot reach (both derivatives exactly zero) are skipped so they
/// do not pad the pass rate.
pub fn finite_difference_check(
    model: &DualEncoder,
    batch: &TrainBatch,
    opts: LossOptions,
    eps: f64,
) -> GradCheck {
    let (_, grad) = batch_gradient(model, batch, opts, None);
    let mut entries = Vec::new();
    let mut probe = model.clone();
    for (tower, g) in [
        (Tower::Input, &grad.input),
        (Tower::Response, &grad.response),
    ] {
        for (i, &a) in g.iter().enumerate() {
            let orig = probe.tower(tower)[i];
            probe.tower_mut(tower)[i] = orig + eps;
            let up = batch_loss(&probe, batch, opts);
            probe.tower_mut(tower)[i] = orig - eps;
            let down = batch_loss(&probe, batch, opts);
            probe.tower_mut(tower)[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            if a == 0.0 && fd == 0.0 {
                continue;
            }
            entries.push((tower, i, a, fd, (a - fd).abs() / (a.abs() + 1e-8)));
        }
    }
    GradCheck { entries }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
