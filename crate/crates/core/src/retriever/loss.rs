//! Sampled-softmax objective. Each row's denominator holds every response in
//! the batch, optionally the input itself encoded by the response tower (the
//! self-negative), and optionally that row's own hard negatives.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{backward, forward, SeqCache};
use super::linalg::{dot, log_softmax_at, softmax};
use super::{DualEncoder, DualGrad, Tower};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossOptions {
    pub self_negative: bool,
    pub hard_negatives: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            self_negative: true,
            hard_negatives: true,
        }
    }
}

impl LossOptions {
    /// In-batch responses only.
    pub fn in_batch_only() -> Self {
        LossOptions {
            self_negative: false,
            hard_negatives: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRow {
    pub input: Vec<u32>,
    pub response: Vec<u32>,
    pub hard_negatives: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBatch {
    rows: Vec<BatchRow>,
}

impl TrainBatch {
    pub fn new(rows: Vec<BatchRow>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::TooFewExamples {
                have: rows.len(),
                need: 2,
            });
        }
        Ok(TrainBatch { rows })
    }

    pub fn rows(&self) -> &[BatchRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// `S(x, y) = h_x · h_y`.
pub fn score(hx: &[f64], hy: &[f64]) -> Result<f64> {
    if hx.len() != hy.len() {
        return Err(Error::DimMismatch(hx.len(), hy.len()));
    }
    Ok(dot(hx, hy))
}

/// Embeddings of everything a batch touches.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEmbeddings {
    pub inputs: Vec<Vec<f64>>,
    pub responses: Vec<Vec<f64>>,
    /// Input verse through the response tower, one per row (may be empty when unused).
    pub selves: Vec<Vec<f64>>,
    /// Per-row hard negatives through the response tower.
    pub hard: Vec<Vec<Vec<f64>>>,
}

/// Row logits in denominator order: batch responses, self, hard negatives.
fn row_logits(emb: &BatchEmbeddings, i: usize, opts: LossOptions) -> Vec<f64> {
    let hx = &emb.inputs[i];
    let mut logits: Vec<f64> = emb.responses.iter().map(|hy| dot(hx, hy)).collect();
    if opts.self_negative {
        logits.push(dot(hx, &emb.selves[i]));
    }
    if opts.hard_negatives {
        logits.extend(emb.hard.get(i).into_iter().flatten().map(|hn| dot(hx, hn)));
    }
    logits
}

/// Approximate `P(y_i | x_i)` from precomputed embeddings.
pub fn prob_from_embeddings(emb: &BatchEmbeddings, i: usize, opts: LossOptions) -> f64 {
    log_softmax_at(&row_logits(emb, i, opts), i).exp()
}

/// `-(1/K) Σ_i log P(y_i | x_i)`.
pub fn loss_from_embeddings(emb: &BatchEmbeddings, opts: LossOptions) -> f64 {
    let k = emb.inputs.len();
    -(0..k)
        .map(|i| log_softmax_at(&row_logits(emb, i, opts), i))
        .sum::<f64>()
        / k as f64
}

fn embed_batch(model: &DualEncoder, batch: &TrainBatch, opts: LossOptions) -> BatchEmbeddings {
    let rows = batch.rows();
    BatchEmbeddings {
        inputs: rows
            .iter()
            .map(|r| model.embed(Tower::Input, &r.input))
            .collect(),
        responses: rows
            .iter()
            .map(|r| model.embed(Tower::Response, &r.response))
            .collect(),
        selves: if opts.self_negative {
            rows.iter()
                .map(|r| model.embed(Tower::Response, &r.input))
                .collect()
        } else {
            Vec::new()
        },
        hard: if opts.hard_negatives {
            rows.iter()
                .map(|r| {
                    r.hard_negatives
                        .iter()
                        .map(|n| model.embed(Tower::Response, n))
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        },
    }
}

pub fn prob_batch(model: &DualEncoder, batch: &TrainBatch, i: usize, opts: LossOptions) -> f64 {
    prob_from_embeddings(&embed_batch(model, batch, opts), i, opts)
}

pub fn batch_loss(model: &DualEncoder, batch: &TrainBatch, opts: LossOptions) -> f64 {
    loss_from_embeddings(&embed_batch(model, batch, opts), opts)
}

/// Softmax of `S(x, ·)` over an entire pool, evaluated at `y`.
pub fn prob_full(model: &DualEncoder, x: &[u32], y: &[u32], pool: &[Vec<u32>]) -> Result<f64> {
    let target = pool
        .iter()
        .position(|c| c.as_slice() == y)
        .ok_or(Error::NotInPool)?;
    let hx = model.embed(Tower::Input, x);
    let logits: Vec<f64> = pool
        .iter()
        .map(|c| dot(&hx, &model.embed(Tower::Response, c)))
        .collect();
    Ok(softmax(&logits)[target])
}

/// Loss and gradient for one batch. Attention dropout is active only when an
/// rng is supplied.
pub fn batch_gradient(
    model: &DualEncoder,
    batch: &TrainBatch,
    opts: LossOptions,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (f64, DualGrad) {
    let cfg = model.config();
    let layout = model.layout();
    let pin = model.tower(Tower::Input);
    let pres = model.tower(Tower::Response);
    let rows = batch.rows();
    let k = rows.len();

    let mut run = |p: &[f64], ids: &[u32]| forward(cfg, &layout, p, ids, rng.as_deref_mut());
    let xs: Vec<SeqCache> = rows.iter().map(|r| run(pin, &r.input)).collect();
    let ys: Vec<SeqCache> = rows.iter().map(|r| run(pres, &r.response)).collect();
    let selves: Vec<SeqCache> = if opts.self_negative {
        rows.iter().map(|r| run(pres, &r.input)).collect()
    } else {
        Vec::new()
    };
    let hard: Vec<Vec<SeqCache>> = if opts.hard_negatives {
        rows.iter()
            .map(|r| r.hard_negatives.iter().map(|n| run(pres, n)).collect())
            .collect()
    } else {
        Vec::new()
    };

    let e = cfg.embed_dim;
    let mut dxs = vec![vec![0.0; e]; k];
    let mut dys = vec![vec![0.0; e]; k];
    let mut dselves = vec![vec![0.0; e]; selves.len()];
    let mut dhard: Vec<Vec<Vec<f64>>> = hard.iter().map(|h| vec![vec![0.0; e]; h.len()]).collect();
    let mut loss = 0.0;

    for i in 0..k {
        let hx = &xs[i].embedding;
        let mut cands: Vec<&[f64]> = ys.iter().map(|c| c.embedding.as_slice()).collect();
        if opts.self_negative {
            cands.push(&selves[i].embedding);
        }
        if opts.hard_negatives {
            cands.extend(hard[i].iter().map(|c| c.embedding.as_slice()));
        }
        let logits: Vec<f64> = cands.iter().map(|c| dot(hx, c)).collect();
        loss -= log_softmax_at(&logits, i);
        let probs = softmax(&logits);
        for (c, (&prob, cand)) in probs.iter().zip(&cands).enumerate() {
            let coef = (prob - if c == i { 1.0 } else { 0.0 }) / k as f64;
            if coef == 0.0 {
                continue;
            }
            for (d, &v) in dxs[i].iter_mut().zip(cand.iter()) {
                *d += coef * v;
            }
            let target = if c < k {
                &mut dys[c]
            } else if opts.self_negative && c == k {
                &mut dselves[i]
            } else {
                &mut dhard[i][c - k - usize::from(opts.self_negative)]
            };
            for (d, &v) in target.iter_mut().zip(hx) {
                *d += coef * v;
            }
        }
    }

    let mut grad = model.zero_grad();
    for (c, d) in xs.iter().zip(&dxs) {
        backward(cfg, &layout, pin, c, d, &mut grad.input);
    }
    let response_side = ys
        .iter()
        .zip(&dys)
        .chain(selves.iter().zip(&dselves))
        .chain(hard.iter().flatten().zip(dhard.iter().flatten()));
    for (c, d) in response_side {
        backward(cfg, &layout, pres, c, d, &mut grad.response);
    }
    (loss / k as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retriever::EncoderConfig;

    fn emb(inputs: &[&[f64]], responses: &[&[f64]], selves: &[&[f64]]) -> BatchEmbeddings {
        BatchEmbeddings {
            inputs: inputs.iter().map(|v| v.to_vec()).collect(),
            responses: responses.iter().map(|v| v.to_vec()).collect(),
            selves: selves.iter().map(|v| v.to_vec()).collect(),
            hard: Vec::new(),
        }
    }

    #[test]
    fn score_examples() {
        assert_eq!(score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!((score(&[0.5, -0.5], &[0.2, 0.4]).unwrap() + 0.1).abs() < 1e-15);
        assert!(matches!(
            score(&[1.0], &[1.0, 2.0]),
            Err(Error::DimMismatch(1, 2))
        ));
    }

    #[test]
    fn hand_set_embeddings_give_closed_form_probability() {
        let e = emb(
            &[&[1.0, 0.0], &[0.0, 1.0]],
            &[&[1.0, 0.0], &[0.0, 1.0]],
            &[&[1.0, 0.0], &[0.0, 1.0]],
        );
        let p = prob_from_embeddings(&e, 0, LossOptions::default());
        let expect = std::f64::consts::E / (2.0 * std::f64::consts::E + 1.0);
        assert!((p - expect).abs() < 1e-12);
        assert!((p - 0.42231).abs() < 1e-5);
    }

    #[test]
    fn zero_parameters_give_log_three() {
        let cfg = EncoderConfig {
            vocab_size: 50,
            max_len: 6,
            model_dim: 4,
            layers: 1,
            heads: 1,
            transformer_hidden: 4,
            head_hidden: 4,
            embed_dim: 4,
            attention_dropout: 0.0,
        };
        let m = DualEncoder::zeros(cfg).unwrap();
        let rows = vec![
            BatchRow {
                input: vec![2, 7, 3],
                response: vec![2, 8, 3],
                hard_negatives: vec![],
            },
            BatchRow {
                input: vec![2, 9, 3],
                response: vec![2, 10, 3],
                hard_negatives: vec![],
            },
        ];
        let batch = TrainBatch::new(rows).unwrap();
        assert!((batch_loss(&m, &batch, LossOptions::default()) - 3f64.ln()).abs() < 1e-12);
        assert!((prob_batch(&m, &batch, 0, LossOptions::default()) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn score_gradient_wrt_input_is_response() {
        // d/dhx (hx · hy) = hy, read off the loss gradient coefficient structure.
        let hy = [0.3, -0.7];
        let hx = [0.1, 0.2];
        let eps = 1e-6;
        for c in 0..2 {
            let mut up = hx;
            up[c] += eps;
            let fd = (score(&up, &hy).unwrap() - score(&hx, &hy).unwrap()) / eps;
            assert!((fd - hy[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn single_row_batch_is_rejected() {
        let row = BatchRow {
            input: vec![2, 3],
            response: vec![2, 3],
            hard_negatives: vec![],
        };
        assert!(TrainBatch::new(vec![row]).is_err());
    }
}
