//! Dual-encoder next-verse retrieval: two towers map the previous verse and a
//! candidate verse to vectors scored by their dot product.

mod encoder;
mod index;
pub mod linalg;
mod loss;
mod train;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use encoder::{prepare_ids, EncoderConfig, Layout, ParamClass};
pub use index::{Suggester, Suggestion, VerseIndex};
pub use loss::{
    batch_gradient, batch_loss, loss_from_embeddings, prob_batch, prob_from_embeddings, prob_full,
    score, BatchEmbeddings, BatchRow, LossOptions, TrainBatch,
};
pub use train::{encode_examples, evaluate_loss, train, EncodedExample, TrainConfig, TrainReport};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tower {
    Input,
    Response,
}

/// Parameters of both towers. The towers share a shape but not their values.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    config: EncoderConfig,
    layout_len: usize,
    input: Vec<f64>,
    response: Vec<f64>,
}

/// Gradients with the same shape as [`DualEncoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualGrad {
    pub input: Vec<f64>,
    pub response: Vec<f64>,
}

const CHECKPOINT_HEADER: &str = "nextverse-dual-encoder v1";

impl DualEncoder {
    /// Randomly initialized towers, reproducible from `seed`.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = layout.init(&mut rng);
        let response = layout.init(&mut rng);
        Ok(DualEncoder {
            config,
            layout_len: layout.len(),
            input,
            response,
        })
    }

    /// All parameters zero. Every embedding is then the zero vector.
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let n = Layout::new(&config).len();
        Ok(DualEncoder {
            config,
            layout_len: n,
            input: vec![0.0; n],
            response: vec![0.0; n],
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn tower(&self, tower: Tower) -> &[f64] {
        match tower {
            Tower::Input => &self.input,
            Tower::Response => &self.response,
        }
    }

    pub fn tower_mut(&mut self, tower: Tower) -> &mut [f64] {
        match tower {
            Tower::Input => &mut self.input,
            Tower::Response => &mut self.response,
        }
    }

    pub fn zero_grad(&self) -> DualGrad {
        DualGrad {
            input: vec![0.0; self.layout_len],
            response: vec![0.0; self.layout_len],
        }
    }

    /// Inference-mode embedding (no dropout). Components lie in (-1, 1).
    pub fn embed(&self, tower: Tower, ids: &[u32]) -> Vec<f64> {
        let layout = self.layout();
        encoder::forward::<ChaCha8Rng>(&self.config, &layout, self.tower(tower), ids, None)
            .embedding
    }

    pub fn is_finite(&self) -> bool {
        self.input
            .iter()
            .chain(&self.response)
            .all(|v| v.is_finite())
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 * self.layout_len);
        for v in self.input.iter().chain(&self.response) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn digest(config_json: &str, payload: &[u8]) -> String {
        let mut h = Sha256::new();
        h.update(config_json.as_bytes());
        h.update(b"\n");
        h.update(payload);
        hex::encode(h.finalize())
    }

    /// Content hash over the configuration and every parameter bit.
    pub fn hash(&self) -> String {
        let config_json = serde_json::to_string(&self.config).expect("config serializes");
        Self::digest(&config_json, &self.payload())
    }

    /// Checkpoint bytes: a text header (format line, config json, hash line)
    /// followed by little-endian f64 parameters, input tower first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let config_json = serde_json::to_string(&self.config).expect("config serializes");
        let payload = self.payload();
        let mut out = Vec::with_capacity(payload.len() + 512);
        let hash = Self::digest(&config_json, &payload);
        write!(out, "{CHECKPOINT_HEADER}\n{config_json}\nsha256 {hash}\n").expect("write to vec");
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::parse("checkpoint", line, m.to_string());
        let mut rest = bytes;
        let mut header_line = |n: usize| -> Result<String> {
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad(n, "truncated header"))?;
            let line =
                std::str::from_utf8(&rest[..end]).map_err(|_| bad(n, "header is not utf-8"))?;
            rest = &rest[end + 1..];
            Ok(line.to_string())
        };
        if header_line(1)? != CHECKPOINT_HEADER {
            return Err(bad(1, "unsupported checkpoint format"));
        }
        let config_json = header_line(2)?;
        let config: EncoderConfig = serde_json::from_str(&config_json)?;
        config.validate()?;
        let stored = header_line(3)?;
        let stored = stored
            .strip_prefix("sha256 ")
            .ok_or_else(|| bad(3, "missing hash"))?
            .to_string();
        let n = Layout::new(&config).len();
        if rest.len() != 16 * n {
            return Err(bad(
                4,
                &format!("expected {} parameter bytes, found {}", 16 * n, rest.len()),
            ));
        }
        if Self::digest(&config_json, rest) != stored {
            return Err(bad(3, "content hash mismatch"));
        }
        let values: Vec<f64> = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let (input, response) = values.split_at(n);
        Ok(DualEncoder {
            config,
            layout_len: n,
            input: input.to_vec(),
            response: response.to_vec(),
        })
    }
}
