use serde::{Deserialize, Serialize};

use super::linalg::dot;
use super::{DualEncoder, Tower};
use crate::error::{Error, Result};
use crate::tokenizer::SubwordVocab;

/// The fixed candidate pool with one response-tower embedding per verse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerseIndex {
    pub checkpoint_hash: String,
    pub dim: usize,
    pub verses: Vec<String>,
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    /// 1-based rank over the whole pool.
    pub rank: usize,
    pub pool_position: usize,
    pub verse: String,
    pub score: f64,
}

impl VerseIndex {
    pub fn build(model: &DualEncoder, vocab: &SubwordVocab, pool: &[String]) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let embeddings = pool
            .iter()
            .map(|v| model.embed(Tower::Response, &vocab.encode(v)))
            .collect();
        Ok(VerseIndex {
            checkpoint_hash: model.hash(),
            dim: model.config().embed_dim,
            verses: pool.to_vec(),
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.verses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verses.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let idx: VerseIndex = serde_json::from_str(raw)?;
        if idx.verses.len() != idx.embeddings.len() {
            return Err(Error::parse(
                "index",
                0,
                "verse and embedding counts differ",
            ));
        }
        if let Some(bad) = idx.embeddings.iter().find(|e| e.len() != idx.dim) {
            return Err(Error::DimMismatch(bad.len(), idx.dim));
        }
        Ok(idx)
    }

    /// Pool positions ordered by score descending, ties by position.
    pub fn ranking(&self, hx: &[f64]) -> Result<Vec<(usize, f64)>> {
        if hx.len() != self.dim {
            return Err(Error::DimMismatch(hx.len(), self.dim));
        }
        let mut scored: Vec<(usize, f64)> = self
            .embeddings
            .iter()
            .map(|e| dot(hx, e))
            .enumerate()
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored)
    }

    /// Ranks `offset+1 ..= offset+n` for a query embedding.
    pub fn top(&self, hx: &[f64], offset: usize, n: usize) -> Result<Vec<Suggestion>> {
        Ok(self
            .ranking(hx)?
            .into_iter()
            .enumerate()
            .skip(offset)
            .take(n)
            .map(|(r, (pos, score))| Suggestion {
                rank: r + 1,
                pool_position: pos,
                verse: self.verses[pos].clone(),
                score,
            })
            .collect())
    }
}

/// A loaded model, tokenizer and index that are known to belong together.
#[derive(Debug, Clone)]
pub struct Suggester {
    model: DualEncoder,
    vocab: SubwordVocab,
    index: VerseIndex,
}

impl Suggester {
    pub fn new(model: DualEncoder, vocab: SubwordVocab, index: VerseIndex) -> Result<Self> {
        let hash = model.hash();
        if hash != index.checkpoint_hash {
            return Err(Error::StaleIndex {
                index: index.checkpoint_hash,
                model: hash,
            });
        }
        Ok(Suggester {
            model,
            vocab,
            index,
        })
    }

    pub fn model(&self) -> &DualEncoder {
        &self.model
    }

    pub fn index(&self) -> &VerseIndex {
        &self.index
    }

    pub fn vocab(&self) -> &SubwordVocab {
        &self.vocab
    }

    pub fn embed_input(&self, text: &str) -> Vec<f64> {
        self.model.embed(Tower::Input, &self.vocab.encode(text))
    }

    /// Top `n` verses to follow `input` (fewer when the pool is smaller).
    pub fn suggest(&self, input: &str, n: usize) -> Result<Vec<Suggestion>> {
        self.suggest_page(input, 0, n)
    }

    pub fn suggest_page(&self, input: &str, offset: usize, n: usize) -> Result<Vec<Suggestion>> {
        if n == 0 {
            return Err(Error::Config(
                "number of suggestions must be at least 1".into(),
            ));
        }
        self.index.top(&self.embed_input(input), offset, n)
    }
}
